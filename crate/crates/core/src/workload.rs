//! Synthetic workloads with known ground-truth access patterns.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::namespace::{child_path, NamespaceCatalog};
use crate::trace::AccessEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadPattern {
    Sequential,
    RandomEpoch,
    ZipfSkewed,
}

/// Describes one job's access sequence over the items directly under
/// `dataset_root`. Each item expands to the blocks of every file beneath it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub job: String,
    pub pattern: WorkloadPattern,
    pub dataset_root: String,
    pub item_count: usize,
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default = "one_f64")]
    pub zipf_exponent: f64,
    /// Number of item draws for the Zipf pattern.
    #[serde(default)]
    pub requests: usize,
    /// Rotate the popularity ranking by `drift_shift` items every
    /// `drift_every` draws (Zipf only).
    #[serde(default)]
    pub drift_every: Option<usize>,
    #[serde(default)]
    pub drift_shift: usize,
    /// Only files with this name are read when an item is a directory.
    #[serde(default)]
    pub leaf_filter: Option<String>,
    #[serde(default)]
    pub inter_request_gap_ms: u64,
    #[serde(default)]
    pub start_ms: u64,
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

impl WorkloadSpec {
    pub fn new(job: &str, pattern: WorkloadPattern, dataset_root: &str, item_count: usize) -> Self {
        Self {
            job: job.to_string(),
            pattern,
            dataset_root: dataset_root.to_string(),
            item_count,
            epochs: 1,
            zipf_exponent: 1.0,
            requests: item_count,
            drift_every: None,
            drift_shift: 0,
            leaf_filter: None,
            inter_request_gap_ms: 0,
            start_ms: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.item_count == 0 {
            return Err(Error::Config(format!(
                "{}: item_count must be positive",
                self.job
            )));
        }
        match self.pattern {
            WorkloadPattern::RandomEpoch if self.epochs == 0 => Err(Error::Config(format!(
                "{}: epochs must be positive",
                self.job
            ))),
            WorkloadPattern::ZipfSkewed
                if self.zipf_exponent.is_nan() || self.zipf_exponent <= 0.0 =>
            {
                Err(Error::Config(format!(
                    "{}: zipf_exponent must be positive",
                    self.job
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Generates the access sequence for `spec`. Deterministic for a fixed seed.
pub fn generate_workload(
    spec: &WorkloadSpec,
    catalog: &NamespaceCatalog,
    seed: u64,
) -> Result<Vec<AccessEvent>> {
    spec.validate()?;
    let root = spec.dataset_root.trim_end_matches('/');
    let root = if root.is_empty() { "/" } else { root };
    let children = catalog.children(root).ok_or_else(|| {
        Error::Config(format!(
            "dataset root {root} is not a directory in the catalog"
        ))
    })?;
    if spec.item_count > children.len() {
        return Err(Error::Config(format!(
            "{}: item_count {} exceeds the {} children of {root}",
            spec.job,
            spec.item_count,
            children.len()
        )));
    }
    let items: Vec<String> = children[..spec.item_count]
        .iter()
        .map(|c| child_path(root, c))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match spec.pattern {
        WorkloadPattern::Sequential => (0..items.len()).collect(),
        WorkloadPattern::RandomEpoch => {
            let mut out = Vec::with_capacity(items.len() * spec.epochs);
            let mut perm: Vec<usize> = (0..items.len()).collect();
            for _ in 0..spec.epochs {
                perm.shuffle(&mut rng);
                out.extend_from_slice(&perm);
            }
            out
        }
        WorkloadPattern::ZipfSkewed => {
            let n = items.len();
            let zipf = Zipf::new(n as f64, spec.zipf_exponent)
                .map_err(|e| Error::Config(format!("{}: {e}", spec.job)))?;
            (0..spec.requests)
                .map(|i| {
                    let rank = zipf.sample(&mut rng) as usize;
                    let shift = match spec.drift_every {
                        Some(every) if every > 0 => (i / every) * spec.drift_shift,
                        _ => 0,
                    };
                    (rank - 1 + shift) % n
                })
                .collect()
        }
    };

    let mut events = Vec::new();
    let mut ts = spec.start_ms;
    for idx in order {
        for file in catalog.files_under(&items[idx]) {
            if let Some(filter) = &spec.leaf_filter {
                if file != items[idx] && !file.ends_with(&format!("/{filter}")) {
                    continue;
                }
            }
            let size = catalog.file_size(&file).unwrap_or(0);
            let blocks = catalog.block_count(&file).unwrap_or(0);
            for b in 0..blocks {
                let offset = b * catalog.block_size();
                let length = (size - offset).min(catalog.block_size());
                events.push(AccessEvent {
                    timestamp_ms: ts,
                    path: format!("{file}#{b}").parse()?,
                    offset_bytes: offset,
                    length_bytes: length,
                    job_id: spec.job.clone(),
                });
                ts += spec.inter_request_gap_ms;
            }
        }
    }
    Ok(events)
}

/// Merges several per-job traces into one, ordered by timestamp. Ties keep
/// the order of the input traces.
pub fn merge_traces(traces: Vec<Vec<AccessEvent>>) -> Vec<AccessEvent> {
    let mut all: Vec<(u64, usize, usize, AccessEvent)> = traces
        .into_iter()
        .enumerate()
        .flat_map(|(t, evs)| {
            evs.into_iter()
                .enumerate()
                .map(move |(i, e)| (e.timestamp_ms, t, i, e))
        })
        .collect();
    all.sort_by_key(|(ts, t, i, _)| (*ts, *t, *i));
    all.into_iter().map(|(_, _, _, e)| e).collect()
}

/// Shape of a synthetic dataset: `subdirs` directories (or none) each
/// holding `files` files of `file_bytes` bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetLayout {
    pub root: String,
    #[serde(default)]
    pub subdirs: usize,
    pub files: usize,
    pub file_bytes: u64,
    #[serde(default = "default_ext")]
    pub extension: String,
}

fn default_ext() -> String {
    "dat".into()
}

impl DatasetLayout {
    pub fn flat(root: &str, files: usize, file_bytes: u64) -> Self {
        Self {
            root: root.to_string(),
            subdirs: 0,
            files,
            file_bytes,
            extension: default_ext(),
        }
    }

    pub fn nested(root: &str, subdirs: usize, files: usize, file_bytes: u64) -> Self {
        Self {
            subdirs,
            ..Self::flat(root, files, file_bytes)
        }
    }

    /// File paths of this layout. Names are zero-padded so that
    /// lexicographic order equals numeric order.
    pub fn file_paths(&self) -> Vec<(String, u64)> {
        let root = self.root.trim_end_matches('/');
        let file =
            |dir: &str, i: usize| (format!("{dir}/{i:06}.{}", self.extension), self.file_bytes);
        if self.subdirs == 0 {
            (0..self.files).map(|i| file(root, i)).collect()
        } else {
            (0..self.subdirs)
                .flat_map(|d| {
                    let dir = format!("{root}/{d:05}");
                    (0..self.files)
                        .map(move |i| file(&dir, i))
                        .collect::<Vec<_>>()
                })
                .collect()
        }
    }
}

pub fn build_catalog(layouts: &[DatasetLayout], block_size: u64) -> Result<NamespaceCatalog> {
    NamespaceCatalog::from_files(
        block_size,
        layouts.iter().flat_map(DatasetLayout::file_paths),
    )
}

/// Draws `n` gaps from the triangular spatial-gap distribution of uniform
/// sampling without replacement over `c` items: `|i - j|` for two distinct
/// uniformly random indices.
pub fn sample_triangular_gaps<R: Rng>(rng: &mut R, c: u64, n: usize) -> Vec<u64> {
    (0..n)
        .map(|_| loop {
            let i = rng.random_range(0..c);
            let j = rng.random_range(0..c);
            if i != j {
                break i.abs_diff(j);
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize) -> NamespaceCatalog {
        build_catalog(&[DatasetLayout::flat("/d", n, 10)], 16).unwrap()
    }

    fn item_index(e: &AccessEvent) -> usize {
        e.path.name().split('.').next().unwrap().parse().unwrap()
    }

    #[test]
    fn sequential_follows_catalog_order() {
        let cat = flat(5);
        let spec = WorkloadSpec::new("j", WorkloadPattern::Sequential, "/d", 3);
        let evs = generate_workload(&spec, &cat, 0).unwrap();
        let idx: Vec<usize> = evs.iter().map(item_index).collect();
        assert_eq!(idx, [0, 1, 2]);
    }

    #[test]
    fn random_epoch_visits_each_item_once_per_epoch() {
        let cat = flat(100);
        let mut spec = WorkloadSpec::new("j", WorkloadPattern::RandomEpoch, "/d", 100);
        spec.epochs = 2;
        let evs = generate_workload(&spec, &cat, 7).unwrap();
        assert_eq!(evs.len(), 200);
        for epoch in evs.chunks(100) {
            let mut idx: Vec<usize> = epoch.iter().map(item_index).collect();
            idx.sort_unstable();
            assert_eq!(idx, (0..100).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zipf_rank_one_frequency_matches_harmonic_normalisation() {
        let cat = flat(100);
        let mut spec = WorkloadSpec::new("j", WorkloadPattern::ZipfSkewed, "/d", 100);
        spec.requests = 10_000;
        let evs = generate_workload(&spec, &cat, 42).unwrap();
        let h100: f64 = (1..=100).map(|k| 1.0 / k as f64).sum();
        let expected = 1.0 / h100;
        assert!((expected - 0.193).abs() < 0.001);
        let freq = evs.iter().filter(|e| item_index(e) == 0).count() as f64 / evs.len() as f64;
        assert!(
            (freq - expected).abs() < 0.02,
            "freq {freq}, expected {expected}"
        );
    }

    #[test]
    fn too_many_items_is_a_config_error() {
        let cat = flat(3);
        let spec = WorkloadSpec::new("j", WorkloadPattern::Sequential, "/d", 4);
        assert!(matches!(
            generate_workload(&spec, &cat, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn generation_is_reproducible() {
        let cat = flat(50);
        let mut spec = WorkloadSpec::new("j", WorkloadPattern::ZipfSkewed, "/d", 50);
        spec.requests = 500;
        spec.inter_request_gap_ms = 3;
        let a = generate_workload(&spec, &cat, 9).unwrap();
        let b = generate_workload(&spec, &cat, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[10].timestamp_ms, 30);
    }

    #[test]
    fn leaf_filter_selects_one_file_per_directory() {
        let cat = build_catalog(&[DatasetLayout::nested("/o", 3, 4, 10)], 16).unwrap();
        let mut spec = WorkloadSpec::new("j", WorkloadPattern::Sequential, "/o", 3);
        spec.leaf_filter = Some("000002.dat".into());
        let evs = generate_workload(&spec, &cat, 0).unwrap();
        let paths: Vec<String> = evs.iter().map(|e| e.path.to_string()).collect();
        assert_eq!(
            paths,
            [
                "/o/00000/000002.dat#0",
                "/o/00001/000002.dat#0",
                "/o/00002/000002.dat#0"
            ]
        );
    }

    #[test]
    fn merge_orders_by_timestamp() {
        let cat = flat(4);
        let mut a = WorkloadSpec::new("a", WorkloadPattern::Sequential, "/d", 2);
        a.inter_request_gap_ms = 10;
        let mut b = WorkloadSpec::new("b", WorkloadPattern::Sequential, "/d", 2);
        b.inter_request_gap_ms = 10;
        b.start_ms = 5;
        let merged = merge_traces(vec![
            generate_workload(&a, &cat, 0).unwrap(),
            generate_workload(&b, &cat, 0).unwrap(),
        ]);
        let ts: Vec<u64> = merged.iter().map(|e| e.timestamp_ms).collect();
        assert_eq!(ts, [0, 5, 10, 15]);
    }
}
