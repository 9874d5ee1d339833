use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::UnitStats;
use crate::policy::EvictionPolicy;
use crate::recognize::PatternLabel;

use super::config::SimConfig;

fn ratio(hits: u64, accesses: u64) -> Option<f64> {
    (accesses > 0).then(|| hits as f64 / accesses as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub events: u64,
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub chr: Option<f64>,
    pub start_ms: f64,
    pub completion_ms: f64,
    pub jct_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub events: u64,
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    /// `None` when nothing was accessed.
    pub chr: Option<f64>,
    pub avg_jct_ms: Option<f64>,
    pub demand_bytes: u64,
    pub prefetch_bytes: u64,
    pub unused_prefetch_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternChange {
    pub at_ms: f64,
    pub pattern: PatternLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub pattern: Option<PatternLabel>,
    pub policy: EvictionPolicy,
    pub transitions: Vec<PatternChange>,
    pub hits: u64,
    pub misses: u64,
    pub ghost_hits: u64,
    pub evictions: u64,
    pub bypasses: u64,
    pub used: u64,
    pub quota: u64,
    pub ttl_ms: Option<f64>,
    pub expired_at_ms: Option<f64>,
}

impl StreamReport {
    pub(crate) fn fill_stats(&mut self, s: &UnitStats) {
        self.hits = s.hits;
        self.misses = s.misses;
        self.ghost_hits = s.ghost_hits;
        self.evictions = s.evictions;
        self.bypasses = s.bypasses;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitAllocationReport {
    pub quota: u64,
    pub benefit: f64,
    pub warming: bool,
    pub pattern: Option<PatternLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub from: Option<String>,
    pub to: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationEntry {
    pub at_ms: u64,
    pub free_bytes: u64,
    pub units: BTreeMap<String, UnitAllocationReport>,
    pub transfers: Vec<TransferReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counter {
    pub hits: u64,
    pub accesses: u64,
}

impl Counter {
    pub fn chr(&self) -> Option<f64> {
        ratio(self.hits, self.accesses)
    }
}

/// Hits over one allocator period, overall and per job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChrSample {
    pub start_ms: u64,
    pub end_ms: u64,
    pub hits: u64,
    pub accesses: u64,
    pub chr: Option<f64>,
    pub jobs: BTreeMap<String, Counter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expiration {
    pub stream: String,
    pub at_ms: f64,
    pub last_access_ms: f64,
    pub ttl_ms: f64,
    pub evicted_blocks: usize,
    pub released_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub aggregate: AggregateReport,
    pub per_job: BTreeMap<String, JobReport>,
    pub per_stream: BTreeMap<String, StreamReport>,
    pub allocation_timeline: Vec<AllocationEntry>,
    pub chr_timeline: Vec<ChrSample>,
    pub expirations: Vec<Expiration>,
    /// Label changes of every classified stream, partitioned or not.
    pub patterns: BTreeMap<String, Vec<PatternChange>>,
    pub config: SimConfig,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub(crate) fn finish(&mut self) {
        let a = &mut self.aggregate;
        a.chr = ratio(a.hits, a.accesses);
        let jobs = self.per_job.len();
        a.avg_jct_ms =
            (jobs > 0).then(|| self.per_job.values().map(|j| j.jct_ms).sum::<f64>() / jobs as f64);
        for j in self.per_job.values_mut() {
            j.chr = ratio(j.hits, j.accesses);
        }
    }

    /// A fixed-width table of per-job and aggregate results.
    pub fn render_table(&self) -> String {
        let fmt_chr = |c: Option<f64>| c.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "{:<20} {:>10} {:>10} {:>10} {:>8} {:>14}\n",
            "job", "accesses", "hits", "misses", "chr", "jct_ms"
        );
        for (id, j) in &self.per_job {
            out += &format!(
                "{:<20} {:>10} {:>10} {:>10} {:>8} {:>14.1}\n",
                id,
                j.accesses,
                j.hits,
                j.misses,
                fmt_chr(j.chr),
                j.jct_ms
            );
        }
        let a = &self.aggregate;
        out += &format!(
            "{:<20} {:>10} {:>10} {:>10} {:>8} {:>14}\n",
            "total",
            a.accesses,
            a.hits,
            a.misses,
            fmt_chr(a.chr),
            a.avg_jct_ms.map_or("-".to_string(), |v| format!("{v:.1}"))
        );
        out += &format!(
            "prefetched {} bytes, {} never used\n",
            a.prefetch_bytes, a.unused_prefetch_bytes
        );
        out
    }

    /// CHR per period followed by the quota timeline, as CSV.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("kind,at_ms,series,value\n");
        for s in &self.chr_timeline {
            if let Some(c) = s.chr {
                out += &format!("chr,{},all,{c}\n", s.end_ms);
            }
            for (job, c) in &s.jobs {
                if let Some(v) = c.chr() {
                    out += &format!("chr,{},{job},{v}\n", s.end_ms);
                }
            }
        }
        for e in &self.allocation_timeline {
            out += &format!("quota,{},free,{}\n", e.at_ms, e.free_bytes);
            for (id, u) in &e.units {
                out += &format!("quota,{},{id},{}\n", e.at_ms, u.quota);
            }
        }
        out
    }
}
