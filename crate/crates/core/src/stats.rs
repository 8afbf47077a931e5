//! Nonparametric comparison of two performance samples.
//!
//! Significance comes from the two-sided Wilcoxon rank-sum test, effect size
//! from Cliff's Delta. Small samples (pooled size up to [`EXACT_THRESHOLD`])
//! get the exact null distribution of the rank sum, conditional on the tie
//! pattern; larger ones use the tie- and continuity-corrected normal
//! approximation.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Significance level used when none is given.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Largest pooled sample size for which the rank-sum p-value is exact.
pub const EXACT_THRESHOLD: usize = 16;

/// Lower bounds of |delta| for the small, medium and large classes.
pub const SMALL_THRESHOLD: f64 = 0.147;
pub const MEDIUM_THRESHOLD: f64 = 0.33;
pub const LARGE_THRESHOLD: f64 = 0.474;

/// Non-empty set of finite, non-negative duration measurements in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Sample(Vec<f64>);

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("empty sample"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::input(format!(
                "sample values must be finite and non-negative, got {bad}"
            )));
        }
        Ok(Sample(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for Sample {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(de)?;
        Sample::new(values).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<Vec<f64>> for Sample {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Sample::new(values)
    }
}

/// Effect-size class of a Cliff's Delta value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Magnitude {
    Negligible,
    Small,
    Medium,
    Large,
}

impl Magnitude {
    pub fn as_str(self) -> &'static str {
        match self {
            Magnitude::Negligible => "negligible",
            Magnitude::Small => "small",
            Magnitude::Medium => "medium",
            Magnitude::Large => "large",
        }
    }
}

impl fmt::Display for Magnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of comparing a baseline sample with an updated one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub p_value: f64,
    /// Cliff's Delta of baseline against updated; negative when the update is slower.
    pub delta: f64,
    pub magnitude: Magnitude,
    /// mean(updated) - mean(baseline); positive when the update is slower.
    pub md_ms: f64,
    pub significant: bool,
}

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) p-value.
pub fn wilcoxon_rank_sum(x: &Sample, y: &Sample) -> f64 {
    let n = x.len();
    let m = y.len();
    let doubled_ranks = pooled_doubled_ranks(x.values(), y.values());
    if n + m <= EXACT_THRESHOLD {
        exact_p_value(&doubled_ranks, n)
    } else {
        approximate_p_value(x.values(), y.values(), &doubled_ranks)
    }
}

/// Mid-ranks of the pooled sample, doubled so that ties stay integral.
/// The first `x.len()` entries belong to `x`.
fn pooled_doubled_ranks(x: &[f64], y: &[f64]) -> Vec<u64> {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));

    let mut ranks = vec![0u64; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && pooled[order[end + 1]] == pooled[order[start]] {
            end += 1;
        }
        // 1-based positions start+1 ..= end+1, mid-rank doubled
        let doubled = (start + 1 + end + 1) as u64;
        for &idx in &order[start..=end] {
            ranks[idx] = doubled;
        }
        start = end + 1;
    }
    ranks
}

/// Exact permutation p-value by counting rank-sum outcomes over all ways of
/// drawing `n` of the pooled ranks.
fn exact_p_value(doubled_ranks: &[u64], n: usize) -> f64 {
    let total_n = doubled_ranks.len();
    let max_sum: u64 = doubled_ranks.iter().sum();
    let width = max_sum as usize + 1;

    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0u64; width]; n + 1];
    ways[0][0] = 1;
    for &r in doubled_ranks {
        let r = r as usize;
        for k in (0..n).rev() {
            let (lower, upper) = ways.split_at_mut(k + 1);
            let src = &lower[k];
            let dst = &mut upper[0];
            for s in (0..width - r).rev() {
                if src[s] != 0 {
                    dst[s + r] += src[s];
                }
            }
        }
    }

    let observed: u64 = doubled_ranks[..n].iter().sum();
    let center = (n * (total_n + 1)) as i64;
    let observed_dev = (observed as i64 - center).abs();
    if observed_dev == 0 {
        return 1.0;
    }
    let total: u64 = ways[n].iter().sum();
    let extreme: u64 = ways[n]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - center).abs() >= observed_dev)
        .map(|(_, c)| c)
        .sum();
    (extreme as f64 / total as f64).min(1.0)
}

fn approximate_p_value(x: &[f64], y: &[f64], doubled_ranks: &[u64]) -> f64 {
    let n = x.len() as f64;
    let m = y.len() as f64;
    let total = n + m;
    let rank_sum = doubled_ranks[..x.len()].iter().sum::<u64>() as f64 / 2.0;
    let expected = n * (total + 1.0) / 2.0;

    let mut sorted: Vec<f64> = x.iter().chain(y).copied().collect();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let variance = n * m / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
    if variance <= 0.0 {
        return 1.0;
    }
    let deviation = (rank_sum - expected).abs();
    if deviation == 0.0 {
        return 1.0;
    }
    let z = (deviation - 0.5).max(0.0) / variance.sqrt();
    erfc(z / std::f64::consts::SQRT_2).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Cliff's Delta: P(x > y) - P(x < y) over all cross pairs.
pub fn cliffs_delta(x: &Sample, y: &Sample) -> f64 {
    let mut sorted_y = y.values().to_vec();
    sorted_y.sort_by(f64::total_cmp);
    let m = sorted_y.len();
    let mut dominance: i64 = 0;
    for &xi in x.values() {
        let below = sorted_y.partition_point(|&v| v < xi);
        let not_above = sorted_y.partition_point(|&v| v <= xi);
        dominance += below as i64 - (m - not_above) as i64;
    }
    dominance as f64 / (x.len() * m) as f64
}

/// Classifies |delta| against the standard Cliff's Delta thresholds.
pub fn magnitude(delta: f64) -> Result<Magnitude> {
    if !(-1.0..=1.0).contains(&delta) {
        return Err(Error::input(format!("delta {delta} outside [-1, 1]")));
    }
    let d = delta.abs();
    Ok(if d < SMALL_THRESHOLD {
        Magnitude::Negligible
    } else if d < MEDIUM_THRESHOLD {
        Magnitude::Small
    } else if d < LARGE_THRESHOLD {
        Magnitude::Medium
    } else {
        Magnitude::Large
    })
}

/// Compares an updated sample with its baseline.
pub fn compare(baseline: &Sample, updated: &Sample, alpha: f64) -> Result<DeviationReport> {
    check_alpha(alpha)?;
    let p_value = wilcoxon_rank_sum(baseline, updated);
    let delta = cliffs_delta(baseline, updated);
    let magnitude = magnitude(delta)?;
    Ok(DeviationReport {
        p_value,
        delta,
        magnitude,
        md_ms: updated.mean() - baseline.mean(),
        significant: p_value <= alpha && magnitude != Magnitude::Negligible,
    })
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::input(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> Sample {
        Sample::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rank_sum_known_values() {
        assert_eq!(wilcoxon_rank_sum(&s(&[1., 2., 3.]), &s(&[4., 5., 6.])), 0.1);
        assert_eq!(wilcoxon_rank_sum(&s(&[5., 5., 5.]), &s(&[5., 5., 5.])), 1.0);
        let p = wilcoxon_rank_sum(&s(&[1., 2., 3., 4., 5.]), &s(&[6., 7., 8., 9., 10.]));
        assert!((p - 2.0 / 252.0).abs() < 1e-15);
    }

    #[test]
    fn empty_sample_is_rejected() {
        assert!(matches!(Sample::new(vec![]), Err(Error::Input(_))));
        assert!(Sample::new(vec![1.0, -0.5]).is_err());
        assert!(Sample::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn cliffs_delta_known_values() {
        assert_eq!(cliffs_delta(&s(&[3., 3.]), &s(&[3., 3.])), 0.0);
        assert_eq!(cliffs_delta(&s(&[10., 11.]), &s(&[1., 2.])), 1.0);
        assert_eq!(cliffs_delta(&s(&[1., 2.]), &s(&[1., 3.])), -0.25);
    }

    #[test]
    fn magnitude_table() {
        assert_eq!(magnitude(0.10).unwrap(), Magnitude::Negligible);
        assert_eq!(magnitude(-0.20).unwrap(), Magnitude::Small);
        assert_eq!(magnitude(0.40).unwrap(), Magnitude::Medium);
        assert_eq!(magnitude(0.60).unwrap(), Magnitude::Large);
        assert_eq!(magnitude(0.147).unwrap(), Magnitude::Small);
        assert_eq!(magnitude(-0.474).unwrap(), Magnitude::Large);
        assert!(magnitude(1.5).is_err());
        assert!(magnitude(f64::NAN).is_err());
    }

    #[test]
    fn compare_identical() {
        let a = s(&[1.0; 30]);
        let r = compare(&a, &a.clone(), DEFAULT_ALPHA).unwrap();
        assert!(!r.significant);
        assert_eq!(r.md_ms, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn compare_separated() {
        let r = compare(&s(&[1.0; 30]), &s(&[2.5; 30]), DEFAULT_ALPHA).unwrap();
        assert!(r.significant);
        assert_eq!(r.md_ms, 1.5);
        assert_eq!(r.delta, -1.0);
        assert_eq!(r.magnitude, Magnitude::Large);
    }

    #[test]
    fn compare_small_sample_not_significant() {
        let r = compare(&s(&[1., 2., 3.]), &s(&[4., 5., 6.]), 0.05).unwrap();
        assert_eq!(r.p_value, 0.1);
        assert_eq!(r.delta, -1.0);
        assert!(!r.significant);
    }

    #[test]
    fn compare_rejects_bad_alpha() {
        let a = s(&[1.0]);
        assert!(compare(&a, &a, 0.0).is_err());
        assert!(compare(&a, &a, 1.0).is_err());
    }

    #[test]
    fn boundary_alpha_is_inclusive() {
        let r = compare(&s(&[1., 2., 3.]), &s(&[4., 5., 6.]), 0.1).unwrap();
        assert!(r.significant);
    }

    #[test]
    fn large_sample_normal_path() {
        let x: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..40).map(|i| i as f64 + 20.0).collect();
        let p = wilcoxon_rank_sum(&s(&x), &s(&y));
        assert!(p > 0.0 && p < 1e-4, "p = {p}");
        assert_eq!(wilcoxon_rank_sum(&s(&x), &s(&x)), 1.0);
    }

    fn sample_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0u32..20, 1..30).prop_map(|v| v.into_iter().map(f64::from).collect())
    }

    proptest! {
        #[test]
        fn delta_is_antisymmetric(x in sample_strategy(), y in sample_strategy()) {
            let (x, y) = (s(&x), s(&y));
            prop_assert_eq!(cliffs_delta(&x, &y), -cliffs_delta(&y, &x));
        }

        #[test]
        fn rank_sum_is_symmetric(x in sample_strategy(), y in sample_strategy()) {
            let (x, y) = (s(&x), s(&y));
            let a = wilcoxon_rank_sum(&x, &y);
            let b = wilcoxon_rank_sum(&y, &x);
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a > 0.0 && a <= 1.0);
        }

        #[test]
        fn rank_invariance(x in sample_strategy(), y in sample_strategy()) {
            let f = |v: &[f64]| s(&v.iter().map(|t| (t * 0.5).exp() + 3.0).collect::<Vec<_>>());
            let (sx, sy) = (s(&x), s(&y));
            let (tx, ty) = (f(&x), f(&y));
            let a = compare(&sx, &sy, DEFAULT_ALPHA).unwrap();
            let b = compare(&tx, &ty, DEFAULT_ALPHA).unwrap();
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert_eq!(a.delta, b.delta);
            prop_assert_eq!(a.magnitude, b.magnitude);
        }

        #[test]
        fn delta_matches_pair_count(x in sample_strategy(), y in sample_strategy()) {
            let mut score = 0i64;
            for a in &x {
                for b in &y {
                    score += (a > b) as i64 - (a < b) as i64;
                }
            }
            let expected = score as f64 / (x.len() * y.len()) as f64;
            prop_assert_eq!(cliffs_delta(&s(&x), &s(&y)), expected);
        }
    }
}
