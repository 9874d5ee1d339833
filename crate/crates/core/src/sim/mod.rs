//! Trace-driven simulation over a virtual clock.

mod config;
mod engine;
mod latency;
mod report;

pub use config::{AllocationMode, PolicyMode, PrefetchSetting, SimConfig};
pub use engine::{run, run_with_tree};
pub use latency::{compute_miss_service_ms, LatencyModel};
pub use report::{
    AggregateReport, AllocationEntry, ChrSample, Counter, Expiration, JobReport, PatternChange,
    SimReport, StreamReport, TransferReport, UnitAllocationReport,
};
