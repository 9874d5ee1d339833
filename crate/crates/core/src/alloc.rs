//! Marginal cache benefit per unit and periodic quota rebalancing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recognize::PatternLabel;

pub const MB: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocatorConfig {
    pub round_bytes: u64,
    pub period_ms: u64,
    pub min_share_bytes: u64,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            round_bytes: 640 * MB,
            period_ms: 60_000,
            min_share_bytes: 640 * MB,
        }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.round_bytes == 0 || self.period_ms == 0 {
            return Err(Error::Config(
                "round bytes and period must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Measurements feeding the benefit formula for one pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenefitInputs {
    Sequential,
    Random {
        /// Mean spacing between the stream's requests, seconds.
        mean_gap_s: Option<f64>,
        block_count: u64,
    },
    Skewed {
        /// Requests per second over the last period; `None` until a full
        /// period has been observed.
        arrival_rate: Option<f64>,
        ghost_hit_freq: f64,
        window: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenefitEstimate {
    pub unit_id: String,
    pub pattern: PatternLabel,
    /// Transmission saved per second per additional unit of cache.
    pub benefit: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reuse_time_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_gap_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arrival_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ghost_hit_freq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub warming: bool,
}

/// B = 1/t where t is the expected time until an extra cached item is
/// reused: never for sequential streams, `g*n` for random ones, and
/// `w/(lambda*f)` for skewed ones.
pub fn marginal_benefit(unit_id: &str, inputs: BenefitInputs) -> BenefitEstimate {
    let mut est = BenefitEstimate {
        unit_id: unit_id.to_string(),
        pattern: PatternLabel::Sequential,
        benefit: 0.0,
        reuse_time_s: None,
        mean_gap_s: None,
        block_count: None,
        arrival_rate: None,
        ghost_hit_freq: None,
        window: None,
        warming: false,
    };
    match inputs {
        BenefitInputs::Sequential => {}
        BenefitInputs::Random {
            mean_gap_s,
            block_count,
        } => {
            est.pattern = PatternLabel::Random;
            est.block_count = Some(block_count);
            est.mean_gap_s = mean_gap_s;
            match mean_gap_s {
                Some(g) if g > 0.0 && block_count > 0 => {
                    let t = g * block_count as f64;
                    est.reuse_time_s = Some(t);
                    est.benefit = 1.0 / t;
                }
                _ => est.warming = true,
            }
        }
        BenefitInputs::Skewed {
            arrival_rate,
            ghost_hit_freq,
            window,
        } => {
            est.pattern = PatternLabel::Skewed;
            est.ghost_hit_freq = Some(ghost_hit_freq);
            est.window = Some(window);
            est.arrival_rate = arrival_rate;
            match arrival_rate {
                Some(lambda) if window > 0 => {
                    est.benefit = lambda * ghost_hit_freq / window as f64;
                    if est.benefit > 0.0 {
                        est.reuse_time_s = Some(1.0 / est.benefit);
                    }
                }
                _ => est.warming = true,
            }
        }
    }
    est
}

/// Snapshot of one unit as seen by the allocator.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitAllocation {
    pub id: String,
    pub quota_bytes: u64,
    pub benefit: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transfer {
    /// `None` is the free pool.
    pub from: Option<String>,
    pub to: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AllocationRound {
    pub at_ms: u64,
    pub transfers: Vec<Transfer>,
    pub round_bytes: u64,
    pub period_ms: u64,
}

fn by_benefit_then_id(a: &UnitAllocation, b: &UnitAllocation) -> std::cmp::Ordering {
    a.benefit
        .total_cmp(&b.benefit)
        .then_with(|| b.id.cmp(&a.id))
}

/// One round: the free pool goes to the highest-benefit unit, then at most
/// one transfer of up to `round_bytes` moves from the lowest-benefit unit
/// with slack above the minimum share to the highest-benefit unit, if the
/// latter's benefit is strictly larger.
pub fn rebalance(
    units: &[UnitAllocation],
    free_bytes: u64,
    config: &AllocatorConfig,
    at_ms: u64,
) -> AllocationRound {
    let mut round = AllocationRound {
        at_ms,
        transfers: Vec::new(),
        round_bytes: config.round_bytes,
        period_ms: config.period_ms,
    };
    // highest benefit, lowest id on ties
    let Some(top) = units.iter().max_by(|a, b| by_benefit_then_id(a, b)) else {
        return round;
    };
    if free_bytes > 0 && top.benefit > 0.0 {
        round.transfers.push(Transfer {
            from: None,
            to: top.id.clone(),
            bytes: free_bytes,
        });
    }
    let donor = units
        .iter()
        .filter(|u| u.id != top.id && u.quota_bytes > config.min_share_bytes)
        .min_by(|a, b| {
            a.benefit
                .total_cmp(&b.benefit)
                .then_with(|| a.id.cmp(&b.id))
        });
    if let Some(d) = donor {
        if top.benefit > d.benefit {
            let bytes = config
                .round_bytes
                .min(d.quota_bytes - config.min_share_bytes);
            round.transfers.push(Transfer {
                from: Some(d.id.clone()),
                to: top.id.clone(),
                bytes,
            });
        }
    }
    round
}

impl AllocationRound {
    /// Applies the transfers to a quota snapshot.
    pub fn apply(&self, units: &mut [UnitAllocation], free_bytes: &mut u64) {
        for t in &self.transfers {
            match &t.from {
                None => *free_bytes -= t.bytes,
                Some(from) => {
                    let u = units
                        .iter_mut()
                        .find(|u| &u.id == from)
                        .expect("donor exists");
                    u.quota_bytes -= t.bytes;
                }
            }
            let u = units
                .iter_mut()
                .find(|u| u.id == t.to)
                .expect("receiver exists");
            u.quota_bytes += t.bytes;
        }
    }
}
