use serde::{Deserialize, Serialize};

/// Remote storage cost model. A miss costs the link delay plus the transfer
/// time, plus the local hit latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub hit_latency_ms: f64,
    pub remote_delay_ms: f64,
    pub remote_bandwidth_bps: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            hit_latency_ms: 0.1,
            remote_delay_ms: 150.0,
            remote_bandwidth_bps: 1e9,
        }
    }
}

impl LatencyModel {
    /// Time the link is busy moving `size_bytes`.
    pub fn transfer_ms(&self, size_bytes: u64) -> f64 {
        size_bytes as f64 * 8.0 / self.remote_bandwidth_bps * 1000.0
    }
}

pub fn compute_miss_service_ms(size_bytes: u64, model: &LatencyModel) -> f64 {
    model.remote_delay_ms + model.transfer_ms(size_bytes) + model.hit_latency_ms
}
