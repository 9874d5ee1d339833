//! Per-pattern prefetch planning, eviction policy selection and idle TTLs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::namespace::{child_path, ItemPath, NamespaceCatalog};
use crate::recognize::PatternLabel;
use crate::tree::ChildFrequencyTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    /// Siblings prefetched ahead of a sequential stream.
    pub prefetch_depth: usize,
    /// Minimum per-visit access frequency for a relative child to be
    /// expanded by hierarchical prefetching.
    pub hot_child_threshold: f64,
    /// Expected hit ratio at which a random stream prefetches its dataset.
    pub statistical_prefetch_chr_threshold: f64,
    pub ttl_z: f64,
    pub ttl_base_ms: f64,
    /// Fraction of remote bandwidth background prefetch may occupy.
    pub prefetch_rate_cap: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            prefetch_depth: 4,
            hot_child_threshold: 0.8,
            statistical_prefetch_chr_threshold: 0.8,
            ttl_z: 2.326,
            ttl_base_ms: 60_000.0,
            prefetch_rate_cap: 0.5,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.prefetch_depth == 0 {
            return Err(Error::Config("prefetch depth must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.hot_child_threshold) {
            return Err(Error::Config(
                "hot child threshold must lie in [0, 1]".into(),
            ));
        }
        if !unit(self.statistical_prefetch_chr_threshold) {
            return Err(Error::Config(
                "statistical prefetch threshold must lie in (0, 1]".into(),
            ));
        }
        if self.ttl_z.is_nan()
            || self.ttl_z <= 0.0
            || self.ttl_base_ms.is_nan()
            || self.ttl_base_ms < 0.0
        {
            return Err(Error::Config(
                "ttl z must be positive and base non-negative".into(),
            ));
        }
        if !unit(self.prefetch_rate_cap) {
            return Err(Error::Config("prefetch rate cap must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefetchGranularity {
    Block,
    File,
    Directory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrefetchPlan {
    /// Block-resolved targets in fetch order.
    pub targets: Vec<ItemPath>,
    pub granularity: PrefetchGranularity,
    pub stream: String,
}

impl PrefetchPlan {
    pub fn empty(stream: &str, granularity: PrefetchGranularity) -> Self {
        Self {
            targets: Vec::new(),
            granularity,
            stream: stream.to_string(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvictionPolicy {
    Eager,
    Uniform,
    Lru,
    /// Baseline only; never chosen by pattern.
    Fifo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefetchMode {
    Stride,
    Statistical,
    None,
}

pub fn select_policies(pattern: PatternLabel) -> (PrefetchMode, EvictionPolicy) {
    match pattern {
        PatternLabel::Sequential => (PrefetchMode::Stride, EvictionPolicy::Eager),
        PatternLabel::Random => (PrefetchMode::Statistical, EvictionPolicy::Uniform),
        PatternLabel::Skewed => (PrefetchMode::None, EvictionPolicy::Lru),
    }
}

fn granularity_of(stream: &str, catalog: &NamespaceCatalog) -> PrefetchGranularity {
    if catalog.is_file(stream) {
        PrefetchGranularity::Block
    } else {
        let first = catalog.children(stream).and_then(|c| c.first());
        match first {
            Some(name) if catalog.is_dir(&child_path(stream, name)) => {
                PrefetchGranularity::Directory
            }
            _ => PrefetchGranularity::File,
        }
    }
}

/// The naive expansion of a non-leaf target: every block below it, paired
/// with its identifier relative to the target (`"sub/f.csv#0"`, `"#3"`).
pub fn expand_target(target: &str, catalog: &NamespaceCatalog) -> Vec<(String, ItemPath)> {
    let strip = format!("{target}/");
    catalog
        .blocks_under(target)
        .into_iter()
        .map(|b| {
            let file = catalog.file_path(b.file);
            let rel = match file.strip_prefix(&strip) {
                Some(rest) => format!("{rest}#{}", b.block),
                None => format!("#{}", b.block),
            };
            let path: ItemPath = file.parse().expect("catalog paths are valid");
            (rel, path.with_block(b.block))
        })
        .collect()
}

/// Keeps only the parts of each target whose relative frequency reaches
/// the hot-child threshold. Block targets pass through untouched.
pub fn hierarchical_filter(
    plan: PrefetchPlan,
    targets: &[String],
    freq: &ChildFrequencyTable,
    catalog: &NamespaceCatalog,
    config: &PolicyConfig,
) -> PrefetchPlan {
    let mut out = PrefetchPlan {
        targets: plan.targets,
        granularity: plan.granularity,
        stream: plan.stream,
    };
    for t in targets {
        for (rel, path) in expand_target(t, catalog) {
            if freq.frequency(&rel) >= config.hot_child_threshold {
                out.targets.push(path);
            }
        }
    }
    out
}

/// Plans the next `prefetch_depth` siblings after `last_index` under the
/// stream's prefix, skipping anything `is_resident` reports.
pub fn plan_prefetch_sequential(
    stream: &str,
    last_index: u64,
    freq: &ChildFrequencyTable,
    catalog: &NamespaceCatalog,
    config: &PolicyConfig,
    is_resident: impl Fn(&ItemPath) -> bool,
) -> PrefetchPlan {
    let granularity = granularity_of(stream, catalog);
    let mut plan = PrefetchPlan::empty(stream, granularity);
    let first = last_index + 1;
    let last = last_index.saturating_add(config.prefetch_depth as u64);
    match granularity {
        PrefetchGranularity::Block => {
            let Ok(item) = stream.parse::<ItemPath>() else {
                return plan;
            };
            let count = catalog.block_count(stream).unwrap_or(0);
            plan.targets = (first..=last.min(count.saturating_sub(1)))
                .filter(|&k| k < count)
                .map(|k| item.with_block(k))
                .collect();
        }
        _ => {
            let children = catalog.children(stream).unwrap_or(&[]);
            let targets: Vec<String> = children
                .iter()
                .skip(first as usize)
                .take(config.prefetch_depth)
                .map(|name| child_path(stream, name))
                .collect();
            plan = hierarchical_filter(plan, &targets, freq, catalog, config);
        }
    }
    plan.targets.retain(|t| !is_resident(t));
    plan
}

/// Whole-dataset prefetch for a random stream when the quota covers at
/// least the threshold fraction of the dataset. `used_bytes` of the quota is
/// already occupied; planned blocks fill the remainder in catalog order.
pub fn plan_prefetch_random(
    stream: &str,
    quota_bytes: u64,
    used_bytes: u64,
    catalog: &NamespaceCatalog,
    config: &PolicyConfig,
    is_resident: impl Fn(&ItemPath) -> bool,
) -> PrefetchPlan {
    let granularity = granularity_of(stream, catalog);
    let mut plan = PrefetchPlan::empty(stream, granularity);
    let dataset_bytes = catalog.bytes_under(stream);
    if dataset_bytes == 0 {
        return plan;
    }
    let expected_chr = (quota_bytes as f64 / dataset_bytes as f64).min(1.0);
    if expected_chr < config.statistical_prefetch_chr_threshold {
        return plan;
    }
    let budget = quota_bytes.saturating_sub(used_bytes);
    let mut planned = 0u64;
    for b in catalog.blocks_under(stream) {
        let bytes = catalog.block_bytes(b);
        if planned + bytes > budget {
            break;
        }
        let path: ItemPath = catalog
            .file_path(b.file)
            .parse()
            .expect("catalog paths are valid");
        let path = path.with_block(b.block);
        if is_resident(&path) {
            continue;
        }
        planned += bytes;
        plan.targets.push(path);
    }
    plan
}

/// Idle threshold after which a stream's data is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtlModel {
    pub mu_ms: f64,
    pub sigma_ms: f64,
    pub z: f64,
    pub base_ms: f64,
}

impl TtlModel {
    /// A constant TTL with no fitted component.
    pub fn fixed(ttl_ms: f64) -> Self {
        Self {
            mu_ms: 0.0,
            sigma_ms: 0.0,
            z: 0.0,
            base_ms: ttl_ms,
        }
    }

    pub fn ttl_ms(&self) -> f64 {
        self.base_ms + self.mu_ms + self.z * self.sigma_ms
    }
}

/// Fits a Normal model to temporal gaps; TTL is the base plus the upper
/// one-sided quantile `mu + z*sigma`.
pub fn fit_ttl(temporal_gaps_ms: &[f64], config: &PolicyConfig) -> Result<TtlModel> {
    let n = temporal_gaps_ms.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if temporal_gaps_ms
        .iter()
        .any(|g| !(g.is_finite() && *g >= 0.0))
    {
        return Err(Error::Domain(
            "temporal gaps must be finite and non-negative".into(),
        ));
    }
    let mu = temporal_gaps_ms.iter().sum::<f64>() / n as f64;
    let ss: f64 = temporal_gaps_ms.iter().map(|g| (g - mu) * (g - mu)).sum();
    let sigma = (ss / (n - 1) as f64).sqrt();
    Ok(TtlModel {
        mu_ms: mu,
        sigma_ms: sigma,
        z: config.ttl_z,
        base_ms: config.ttl_base_ms,
    })
}

pub fn check_stream_expiry(last_access_ms: u64, now_ms: u64, ttl: &TtlModel) -> bool {
    now_ms.saturating_sub(last_access_ms) as f64 > ttl.ttl_ms()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_catalog, DatasetLayout};
    use proptest::prelude::*;
    use std::collections::HashSet;

    const GIB: u64 = 1 << 30;

    fn names(plan: &PrefetchPlan) -> Vec<String> {
        plan.targets.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn sequential_plan_takes_next_n_blocks() {
        let cat = NamespaceCatalog::from_files(1, [("/d/f", 100u64)]).unwrap();
        let empty = ChildFrequencyTable::default();
        let cfg = PolicyConfig::default();
        let plan = plan_prefetch_sequential("/d/f", 7, &empty, &cat, &cfg, |_| false);
        assert_eq!(plan.granularity, PrefetchGranularity::Block);
        assert_eq!(names(&plan), ["/d/f#8", "/d/f#9", "/d/f#10", "/d/f#11"]);
        assert!(plan_prefetch_sequential("/d/f", 99, &empty, &cat, &cfg, |_| false).is_empty());
        assert_eq!(
            plan_prefetch_sequential("/d/f", 98, &empty, &cat, &cfg, |_| false)
                .targets
                .len(),
            1
        );
    }

    #[test]
    fn sequential_plan_over_files_uses_hot_blocks() {
        let cat = build_catalog(&[DatasetLayout::flat("/d", 100, 4)], 4).unwrap();
        let freq = ChildFrequencyTable::from_counts(50, &[("#0", 50)]);
        let cfg = PolicyConfig::default();
        let plan = plan_prefetch_sequential("/d", 7, &freq, &cat, &cfg, |_| false);
        assert_eq!(plan.granularity, PrefetchGranularity::File);
        assert_eq!(
            names(&plan),
            [
                "/d/000008.dat#0",
                "/d/000009.dat#0",
                "/d/000010.dat#0",
                "/d/000011.dat#0"
            ]
        );
        let resident: HashSet<String> = ["/d/000009.dat#0".to_string()].into();
        let plan = plan_prefetch_sequential("/d", 7, &freq, &cat, &cfg, |p| {
            resident.contains(&p.to_string())
        });
        assert_eq!(plan.targets.len(), 3);
        assert!(!names(&plan).contains(&"/d/000009.dat#0".to_string()));
    }

    fn icoads() -> NamespaceCatalog {
        let mut files = Vec::new();
        for m in ["202209", "202210", "202211"] {
            for r in 0..10 {
                files.push((format!("/icoads/{m}/10_{r}00_00_110.csv"), 8u64));
            }
        }
        NamespaceCatalog::from_files(4, files).unwrap()
    }

    #[test]
    fn hierarchical_filter_expands_only_hot_child() {
        let cat = icoads();
        let cfg = PolicyConfig::default();
        let freq = ChildFrequencyTable::from_counts(
            100,
            &[
                ("10_100_00_110.csv#0", 100),
                ("10_100_00_110.csv#1", 100),
                ("10_500_00_110.csv#0", 50),
            ],
        );
        let plan = hierarchical_filter(
            PrefetchPlan::empty("/icoads", PrefetchGranularity::Directory),
            &["/icoads/202210".to_string()],
            &freq,
            &cat,
            &cfg,
        );
        assert_eq!(
            names(&plan),
            [
                "/icoads/202210/10_100_00_110.csv#0",
                "/icoads/202210/10_100_00_110.csv#1"
            ]
        );
    }

    #[test]
    fn hierarchical_filter_keeps_everything_when_all_hot() {
        let cat = icoads();
        let counts: Vec<(String, u64)> = expand_target("/icoads/202209", &cat)
            .into_iter()
            .map(|(rel, _)| (rel, 9))
            .collect();
        let refs: Vec<(&str, u64)> = counts.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let freq = ChildFrequencyTable::from_counts(10, &refs);
        let plan = hierarchical_filter(
            PrefetchPlan::empty("/icoads", PrefetchGranularity::Directory),
            &["/icoads/202211".to_string()],
            &freq,
            &cat,
            &PolicyConfig::default(),
        );
        assert_eq!(plan.targets.len(), 20);
    }

    proptest! {
        #[test]
        fn filter_is_a_subset_of_naive_expansion(
            counts in proptest::collection::vec(0u64..=20, 20),
            threshold in 0.0f64..=1.0,
        ) {
            let cat = icoads();
            let naive: Vec<ItemPath> = expand_target("/icoads/202210", &cat).into_iter().map(|(_, p)| p).collect();
            let rels: Vec<String> = expand_target("/icoads/202210", &cat).into_iter().map(|(r, _)| r).collect();
            let refs: Vec<(&str, u64)> = rels.iter().map(|r| r.as_str()).zip(counts.iter().copied()).collect();
            let freq = ChildFrequencyTable::from_counts(20, &refs);
            let run = |t: f64| {
                let cfg = PolicyConfig { hot_child_threshold: t, ..PolicyConfig::default() };
                hierarchical_filter(
                    PrefetchPlan::empty("/icoads", PrefetchGranularity::Directory),
                    &["/icoads/202210".to_string()],
                    &freq,
                    &cat,
                    &cfg,
                ).targets
            };
            let filtered = run(threshold);
            prop_assert!(filtered.iter().all(|t| naive.contains(t)));
            prop_assert_eq!(run(0.0), naive.clone());
            let always: Vec<ItemPath> = naive.iter().zip(&counts).filter(|(_, &c)| c == 20).map(|(p, _)| p.clone()).collect();
            prop_assert_eq!(run(1.0), always);
        }
    }

    fn ten_gib() -> NamespaceCatalog {
        build_catalog(&[DatasetLayout::flat("/ds", 10, GIB)], 4 << 20).unwrap()
    }

    #[test]
    fn random_plan_fills_quota_at_threshold() {
        let cat = ten_gib();
        let cfg = PolicyConfig::default();
        let plan = plan_prefetch_random("/ds", 8 * GIB, 0, &cat, &cfg, |_| false);
        assert_eq!(plan.targets.len() as u64, 8 * GIB / (4 << 20));
        assert_eq!(plan.targets[0].to_string(), "/ds/000000.dat#0");
        assert!(plan_prefetch_random("/ds", 2 * GIB, 0, &cat, &cfg, |_| false).is_empty());
        let all = plan_prefetch_random("/ds", 20 * GIB, 0, &cat, &cfg, |_| false);
        assert_eq!(all.targets.len() as u64, 10 * GIB / (4 << 20));
    }

    #[test]
    fn random_plan_skips_resident_and_respects_used_bytes() {
        let cat = ten_gib();
        let cfg = PolicyConfig::default();
        let plan = plan_prefetch_random("/ds", 8 * GIB, GIB, &cat, &cfg, |p| {
            p.item_str() == "/ds/000000.dat"
        });
        assert_eq!(plan.targets.len() as u64, 7 * GIB / (4 << 20));
        assert!(plan
            .targets
            .iter()
            .all(|p| p.item_str() != "/ds/000000.dat"));
    }

    #[test]
    fn policies_by_pattern() {
        assert_eq!(
            select_policies(PatternLabel::Sequential),
            (PrefetchMode::Stride, EvictionPolicy::Eager)
        );
        assert_eq!(
            select_policies(PatternLabel::Random),
            (PrefetchMode::Statistical, EvictionPolicy::Uniform)
        );
        assert_eq!(
            select_policies(PatternLabel::Skewed),
            (PrefetchMode::None, EvictionPolicy::Lru)
        );
    }

    #[test]
    fn ttl_examples() {
        let cfg = PolicyConfig::default();
        let constant = fit_ttl(&[2000.0; 5], &cfg).unwrap();
        assert_eq!(constant.sigma_ms, 0.0);
        assert_eq!(constant.ttl_ms(), 62_000.0);
        let m = TtlModel {
            mu_ms: 10_000.0,
            sigma_ms: 5_000.0,
            z: 2.326,
            base_ms: 60_000.0,
        };
        assert!((m.ttl_ms() - 81_630.0).abs() < 1e-9);
        assert!(matches!(
            fit_ttl(&[1.0], &cfg),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn ttl_fit_matches_two_pass_oracle() {
        let gaps = [120.0, 4000.0, 950.0, 3100.0, 77.0, 20_000.0];
        let n = gaps.len() as f64;
        let mean = gaps.iter().sum::<f64>() / n;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m = fit_ttl(&gaps, &PolicyConfig::default()).unwrap();
        assert!((m.mu_ms - mean).abs() < 1e-9);
        assert!((m.sigma_ms - var.sqrt()).abs() < 1e-9);
        assert!((m.ttl_ms() - (60_000.0 + mean + 2.326 * var.sqrt())).abs() < 1e-6);
    }

    #[test]
    fn expiry_after_86_second_ttl() {
        // fitted quantile of 26 s over the 60 s base
        let ttl = TtlModel {
            mu_ms: 3_740.0,
            sigma_ms: 22_260.0 / 2.326,
            z: 2.326,
            base_ms: 60_000.0,
        };
        assert!((ttl.ttl_ms() - 86_000.0).abs() < 1e-6);
        let stop = 60_000;
        assert!(!check_stream_expiry(stop, stop, &ttl));
        assert!(!check_stream_expiry(stop, stop + 60_000, &ttl));
        assert!(!check_stream_expiry(stop, 146_000, &ttl));
        assert!(check_stream_expiry(stop, 146_001, &ttl));
        assert!(check_stream_expiry(stop, stop + 87_000, &ttl));
    }

    proptest! {
        #[test]
        fn ttl_is_translation_consistent(
            gaps in proptest::collection::vec(0.0f64..1e5, 2..50),
            delta in 0.0f64..1e5,
        ) {
            let cfg = PolicyConfig::default();
            let a = fit_ttl(&gaps, &cfg).unwrap();
            let shifted: Vec<f64> = gaps.iter().map(|g| g + delta).collect();
            let b = fit_ttl(&shifted, &cfg).unwrap();
            prop_assert!((b.ttl_ms() - a.ttl_ms() - delta).abs() < 1e-6 * (1.0 + a.ttl_ms()));
            prop_assert!(a.ttl_ms() >= cfg.ttl_base_ms && a.sigma_ms >= 0.0);
        }
    }
}
