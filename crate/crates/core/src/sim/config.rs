use serde::{Deserialize, Serialize};

use crate::alloc::AllocatorConfig;
use crate::cache::DEFAULT_BUFFER_WINDOW;
use crate::error::{Error, Result};
use crate::policy::PolicyConfig;
use crate::recognize::RecognizerConfig;
use crate::tree::TreeConfig;

use super::latency::LatencyModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Per-stream partitions with pattern-selected eviction.
    Adaptive,
    Lru,
    Fifo,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefetchSetting {
    None,
    /// Block readahead within a file once consecutive blocks are seen.
    Stride,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    Adaptive,
    Static,
}

/// Every tunable of the simulator as one flat table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub cache_bytes: u64,
    pub policy: PolicyMode,
    pub prefetch: PrefetchSetting,
    pub allocation: AllocationMode,

    pub window_size: usize,
    pub max_nodes: usize,
    pub compression: bool,

    pub alpha: f64,
    pub sequential_fraction_threshold: f64,

    pub prefetch_depth: usize,
    pub hot_child_threshold: f64,
    pub statistical_prefetch_chr_threshold: f64,
    pub ttl_z: f64,
    pub ttl_base_ms: f64,
    /// Replaces the fitted TTL when set.
    pub fixed_ttl_ms: Option<f64>,
    pub prefetch_rate_cap: f64,
    pub stride_depth: usize,

    pub buffer_window: usize,
    pub round_bytes: u64,
    pub period_ms: u64,
    pub min_share_bytes: u64,
    /// Each new partition starts at `cache_bytes / expected_streams`; when
    /// unset, new partitions get an even share of the current ones.
    pub expected_streams: Option<usize>,
    /// Capacity kept for data outside any partition.
    pub unclassified_share_bytes: u64,

    pub hit_latency_ms: f64,
    pub remote_delay_ms: f64,
    pub remote_bandwidth_bps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let tree = TreeConfig::default();
        let rec = RecognizerConfig::default();
        let pol = PolicyConfig::default();
        let alloc = AllocatorConfig::default();
        let lat = LatencyModel::default();
        Self {
            cache_bytes: 8 << 30,
            policy: PolicyMode::Adaptive,
            prefetch: PrefetchSetting::Adaptive,
            allocation: AllocationMode::Adaptive,
            window_size: tree.window_size,
            max_nodes: tree.max_nodes,
            compression: tree.compression_enabled,
            alpha: rec.alpha,
            sequential_fraction_threshold: rec.sequential_fraction_threshold,
            prefetch_depth: pol.prefetch_depth,
            hot_child_threshold: pol.hot_child_threshold,
            statistical_prefetch_chr_threshold: pol.statistical_prefetch_chr_threshold,
            ttl_z: pol.ttl_z,
            ttl_base_ms: pol.ttl_base_ms,
            fixed_ttl_ms: None,
            prefetch_rate_cap: pol.prefetch_rate_cap,
            stride_depth: 4,
            buffer_window: DEFAULT_BUFFER_WINDOW,
            round_bytes: alloc.round_bytes,
            period_ms: alloc.period_ms,
            min_share_bytes: alloc.min_share_bytes,
            expected_streams: None,
            unclassified_share_bytes: alloc.min_share_bytes,
            hit_latency_ms: lat.hit_latency_ms,
            remote_delay_ms: lat.remote_delay_ms,
            remote_bandwidth_bps: lat.remote_bandwidth_bps,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn tree(&self) -> TreeConfig {
        TreeConfig {
            window_size: self.window_size,
            max_nodes: self.max_nodes,
            compression_enabled: self.compression,
        }
    }

    pub fn recognizer(&self) -> RecognizerConfig {
        RecognizerConfig {
            alpha: self.alpha,
            sequential_fraction_threshold: self.sequential_fraction_threshold,
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            prefetch_depth: self.prefetch_depth,
            hot_child_threshold: self.hot_child_threshold,
            statistical_prefetch_chr_threshold: self.statistical_prefetch_chr_threshold,
            ttl_z: self.ttl_z,
            ttl_base_ms: self.ttl_base_ms,
            prefetch_rate_cap: self.prefetch_rate_cap,
        }
    }

    pub fn allocator(&self) -> AllocatorConfig {
        AllocatorConfig {
            round_bytes: self.round_bytes,
            period_ms: self.period_ms,
            min_share_bytes: self.min_share_bytes,
        }
    }

    pub fn latency(&self) -> LatencyModel {
        LatencyModel {
            hit_latency_ms: self.hit_latency_ms,
            remote_delay_ms: self.remote_delay_ms,
            remote_bandwidth_bps: self.remote_bandwidth_bps,
        }
    }

    /// Checks every setting before a run starts.
    pub fn validate(&self) -> Result<()> {
        self.tree().validate()?;
        self.recognizer().validate()?;
        self.policy_config().validate()?;
        self.allocator().validate()?;
        if self.cache_bytes == 0 {
            return Err(Error::Config("cache_bytes must be positive".into()));
        }
        if self.buffer_window == 0 {
            return Err(Error::Config("buffer_window must be positive".into()));
        }
        if !(self.hit_latency_ms >= 0.0
            && self.remote_delay_ms >= 0.0
            && self.remote_bandwidth_bps > 0.0)
        {
            return Err(Error::Config(
                "latencies must be non-negative and bandwidth positive".into(),
            ));
        }
        if self.expected_streams == Some(0) {
            return Err(Error::Config("expected_streams must be positive".into()));
        }
        if let Some(t) = self.fixed_ttl_ms {
            if t.is_nan() || t < 0.0 {
                return Err(Error::Config("fixed_ttl_ms must be non-negative".into()));
            }
        }
        Ok(())
    }
}
