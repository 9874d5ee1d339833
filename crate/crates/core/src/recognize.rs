//! Online access-pattern recognition.
//!
//! A stream's window of child indices is reduced to spatial gaps. Mostly
//! unit gaps mean a sequential scan. Otherwise the gap sample is tested
//! against the triangular distribution that uniform sampling without
//! replacement produces; acceptance means random, rejection means skewed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this item count the triangular reference is too coarse to test.
pub const MIN_ITEMS_FOR_KS: u64 = 10;
/// Windows with a larger fraction of exact repeats are skewed outright.
pub const MAX_REPEAT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternLabel {
    Sequential,
    Random,
    Skewed,
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternLabel::Sequential => "sequential",
            PatternLabel::Random => "random",
            PatternLabel::Skewed => "skewed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecognizerConfig {
    pub alpha: f64,
    pub sequential_fraction_threshold: f64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            sequential_fraction_threshold: 0.9,
        }
    }
}

impl RecognizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} not in (0,1)", self.alpha)));
        }
        if !(self.sequential_fraction_threshold > 0.0 && self.sequential_fraction_threshold <= 1.0)
        {
            return Err(Error::Config(format!(
                "sequential_fraction_threshold {} not in (0,1]",
                self.sequential_fraction_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTestResult {
    pub d_max: f64,
    pub d_alpha: f64,
    pub sample_count: usize,
    pub alpha: f64,
    pub reject_null: bool,
    pub c: u64,
}

/// Non-zero gaps between consecutive indices, plus the number of exact
/// repeats that were left out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GapSample {
    pub gaps: Vec<u64>,
    pub repeats: usize,
}

impl GapSample {
    pub fn pairs(&self) -> usize {
        self.gaps.len() + self.repeats
    }

    pub fn repeat_fraction(&self) -> f64 {
        if self.pairs() == 0 {
            0.0
        } else {
            self.repeats as f64 / self.pairs() as f64
        }
    }
}

pub fn spatial_gaps(indices: &[u64]) -> Result<GapSample> {
    if indices.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: indices.len(),
        });
    }
    let mut gaps = Vec::with_capacity(indices.len() - 1);
    let mut repeats = 0;
    for w in indices.windows(2) {
        match w[1].abs_diff(w[0]) {
            0 => repeats += 1,
            g => gaps.push(g),
        }
    }
    Ok(GapSample { gaps, repeats })
}

pub fn detect_sequential(gaps: &[u64], config: &RecognizerConfig) -> bool {
    if gaps.is_empty() {
        return false;
    }
    let ones = gaps.iter().filter(|&&g| g == 1).count();
    ones as f64 / gaps.len() as f64 >= config.sequential_fraction_threshold
}

/// CDF of the spatial gap between two distinct uniformly drawn indices out
/// of `c`: `2k/(c-1) - k(k+1)/(c(c-1))`.
pub fn triangular_cdf(k: u64, c: u64) -> Result<f64> {
    if c < 2 || k == 0 || k > c - 1 {
        return Err(Error::Domain(format!(
            "triangular_cdf: k={k} outside 1..={} (c={c})",
            c.saturating_sub(1)
        )));
    }
    if k == c - 1 {
        return Ok(1.0);
    }
    let (k, c) = (k as f64, c as f64);
    Ok(2.0 * k / (c - 1.0) - k * (k + 1.0) / (c * (c - 1.0)))
}

/// Asymptotic Kolmogorov critical coefficient `c(alpha)`, so that
/// `D_alpha = c(alpha) / sqrt(n)`.
pub fn ks_critical_coefficient(alpha: f64) -> f64 {
    const TABLE: [(f64, f64); 5] = [
        (0.20, 1.073),
        (0.10, 1.224),
        (0.05, 1.358),
        (0.01, 1.628),
        (0.001, 1.949),
    ];
    for (a, c) in TABLE {
        if (alpha - a).abs() < 1e-12 {
            return c;
        }
    }
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// One-sample K-S test of `gaps` against the triangular reference over `c`
/// items. Gaps beyond the support are treated as `c - 1`.
pub fn ks_test_random(gaps: &[u64], c: u64, config: &RecognizerConfig) -> Result<KsTestResult> {
    if gaps.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: gaps.len(),
        });
    }
    if c < 2 {
        return Err(Error::Domain(format!("ks_test_random: c={c} < 2")));
    }
    let mut sorted: Vec<u64> = gaps.iter().map(|&g| g.clamp(1, c - 1)).collect();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut d_max: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let k = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == k {
            j += 1;
        }
        let f = triangular_cdf(k, c)?;
        let below = i as f64 / n;
        let top = j as f64 / n;
        d_max = d_max.max((top - f).abs()).max((f - below).abs());
        i = j;
    }
    let d_max = d_max.min(1.0);
    let d_alpha = ks_critical_coefficient(config.alpha) / n.sqrt();
    Ok(KsTestResult {
        d_max,
        d_alpha,
        sample_count: sorted.len(),
        alpha: config.alpha,
        reject_null: d_max >= d_alpha,
        c,
    })
}

/// Outcome of classifying one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: PatternLabel,
    pub ks: Option<KsTestResult>,
    pub repeat_fraction: f64,
}

/// Maps a window of child indices onto a pattern. The sequential check
/// always runs before the K-S test.
pub fn classify(indices: &[u64], c: u64, config: &RecognizerConfig) -> Result<Classification> {
    let sample = spatial_gaps(indices)?;
    let repeat_fraction = sample.repeat_fraction();
    let skewed = Classification {
        label: PatternLabel::Skewed,
        ks: None,
        repeat_fraction,
    };
    if sample.gaps.is_empty() {
        return Ok(skewed);
    }
    if detect_sequential(&sample.gaps, config) {
        return Ok(Classification {
            label: PatternLabel::Sequential,
            ks: None,
            repeat_fraction,
        });
    }
    if repeat_fraction > MAX_REPEAT_FRACTION || c < MIN_ITEMS_FOR_KS {
        return Ok(skewed);
    }
    let ks = ks_test_random(&sample.gaps, c, config)?;
    Ok(Classification {
        label: if ks.reject_null {
            PatternLabel::Skewed
        } else {
            PatternLabel::Random
        },
        ks: Some(ks),
        repeat_fraction,
    })
}

/// Item count to test against: the catalog count when known, else one past
/// the largest observed index.
pub fn estimate_item_count(indices: &[u64], catalog_count: Option<u64>) -> u64 {
    catalog_count.unwrap_or_else(|| indices.iter().max().map_or(0, |m| m + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Counts ordered pairs of distinct items in 1..=c with gap <= k.
    fn enumerate_cdf(k: u64, c: u64) -> f64 {
        let mut hits = 0u64;
        for i in 1..=c {
            for j in 1..=c {
                if i != j && i.abs_diff(j) <= k {
                    hits += 1;
                }
            }
        }
        hits as f64 / (c * (c - 1)) as f64
    }

    #[test]
    fn gaps_examples() {
        assert_eq!(spatial_gaps(&[0, 1, 2, 3]).unwrap().gaps, [1, 1, 1]);
        assert_eq!(spatial_gaps(&[5, 2, 9]).unwrap().gaps, [3, 7]);
        let s = spatial_gaps(&[4, 4, 6]).unwrap();
        assert_eq!(s.gaps, [2]);
        assert_eq!(s.repeats, 1);
        assert!(matches!(
            spatial_gaps(&[1]),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn sequential_threshold() {
        let cfg = RecognizerConfig::default();
        assert!(detect_sequential(&[1; 100], &cfg));
        let mut g = vec![1u64; 95];
        g.extend([40, 300, 7, 19, 88]);
        assert!(detect_sequential(&g, &cfg));
        let strict = RecognizerConfig {
            sequential_fraction_threshold: 0.96,
            ..cfg
        };
        assert!(!detect_sequential(&g, &strict));
    }

    #[test]
    fn permutation_gaps_are_not_sequential() {
        let cfg = RecognizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut perm: Vec<u64> = (0..1000).collect();
        let mut false_positive = 0;
        let mut unit_fraction = 0.0;
        for _ in 0..1000 {
            perm.shuffle(&mut rng);
            let s = spatial_gaps(&perm[..100]).unwrap();
            unit_fraction +=
                s.gaps.iter().filter(|&&g| g == 1).count() as f64 / s.gaps.len() as f64;
            if detect_sequential(&s.gaps, &cfg) {
                false_positive += 1;
            }
        }
        assert_eq!(false_positive, 0);
        // expected fraction of unit gaps is 2/c
        assert!((unit_fraction / 1000.0 - 0.002).abs() < 0.001);
    }

    #[test]
    fn triangular_cdf_examples() {
        for c in [2, 3, 10, 1000] {
            assert_eq!(triangular_cdf(c - 1, c).unwrap(), 1.0);
        }
        assert!((triangular_cdf(1, 100).unwrap() - 0.02).abs() < 1e-15);
        assert!((triangular_cdf(2, 4).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((enumerate_cdf(2, 4) - 5.0 / 6.0).abs() < 1e-15);
        assert!(triangular_cdf(0, 4).is_err());
        assert!(triangular_cdf(4, 4).is_err());
    }

    #[test]
    fn triangular_cdf_matches_pmf_sum() {
        for c in 2..=64u64 {
            let mut acc = 0.0;
            for k in 1..c {
                acc += 2.0 * (c - k) as f64 / (c * (c - 1)) as f64;
                assert!(
                    (triangular_cdf(k, c).unwrap() - acc).abs() < 1e-12,
                    "c={c} k={k}"
                );
            }
        }
    }

    #[test]
    fn critical_value_at_n_100() {
        let cfg = RecognizerConfig::default();
        let gaps: Vec<u64> = (1..=100).collect();
        let r = ks_test_random(&gaps, 1000, &cfg).unwrap();
        assert!((r.d_alpha - 0.1628).abs() < 1e-12);
        assert_eq!(r.sample_count, 100);
        assert!((ks_critical_coefficient(0.05) - 1.358).abs() < 1e-12);
        assert!((ks_critical_coefficient(0.02) - 1.5174).abs() < 1e-3);
    }

    #[test]
    fn unit_gaps_reject_triangular() {
        let cfg = RecognizerConfig::default();
        let r = ks_test_random(&[1; 99], 1000, &cfg).unwrap();
        assert!(r.d_max >= 0.998 - 1e-12);
        assert!(r.reject_null);
    }

    #[test]
    fn reject_iff_d_max_at_least_d_alpha() {
        let cfg = RecognizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let gaps = crate::workload::sample_triangular_gaps(&mut rng, 50, 30);
            let r = ks_test_random(&gaps, 50, &cfg).unwrap();
            assert_eq!(r.reject_null, r.d_max >= r.d_alpha);
        }
    }

    #[test]
    fn sequential_windows_are_never_ks_tested() {
        let cfg = RecognizerConfig::default();
        let idx: Vec<u64> = (0..100).collect();
        let c = classify(&idx, 1000, &cfg).unwrap();
        assert_eq!(c.label, PatternLabel::Sequential);
        assert!(c.ks.is_none());
    }

    #[test]
    fn heavy_repeats_short_circuit_to_skewed() {
        let cfg = RecognizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut perm: Vec<u64> = (0..1000).collect();
        perm.shuffle(&mut rng);
        let mut idx = Vec::new();
        for &p in &perm[..80] {
            idx.push(p);
            if idx.len() % 4 == 0 {
                idx.push(p);
            }
        }
        let c = classify(&idx, 1000, &cfg).unwrap();
        assert_eq!(c.label, PatternLabel::Skewed);
        assert!(c.ks.is_none());
    }

    #[test]
    fn tiny_datasets_are_skewed() {
        let cfg = RecognizerConfig::default();
        let c = classify(&[3, 0, 5, 1, 7, 2, 8], 9, &cfg).unwrap();
        assert_eq!(c.label, PatternLabel::Skewed);
    }

    #[test]
    fn item_count_fallback() {
        assert_eq!(estimate_item_count(&[3, 9, 1], None), 10);
        assert_eq!(estimate_item_count(&[3, 9, 1], Some(500)), 500);
    }
}
