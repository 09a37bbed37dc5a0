//! Split-conformal building blocks: order-statistic quantile, inverse
//! quantile with its two-sided coverage bounds, and prediction sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scores::ScoreTable;

/// Sorted calibration scores and a miscoverage level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalCalibrator {
    scores: Vec<f64>,
    alpha: f64,
}

/// Coverage known up to an interval: `[count/(m+1), (count+1)/(m+1)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageInterval {
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
}

impl CoverageInterval {
    /// Interval implied by `count` of `m` calibration scores lying at or
    /// below the threshold.
    pub fn from_count(count: usize, m: usize) -> Self {
        let denom = (m + 1) as f64;
        Self {
            lower: count as f64 / denom,
            upper: (count + 1) as f64 / denom,
            width: 1.0 / denom,
        }
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lower <= p && p <= self.upper
    }
}

/// Threshold(s) defining prediction sets: one shared `λ` or one per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Thresholds {
    Global(f64),
    Classwise(Vec<f64>),
}

impl Thresholds {
    #[inline]
    pub fn for_label(&self, label: usize) -> f64 {
        match self {
            Thresholds::Global(l) => *l,
            Thresholds::Classwise(v) => v[label],
        }
    }

    pub fn set(&self, score_row: &[f64]) -> Vec<usize> {
        match self {
            Thresholds::Global(l) => prediction_set(score_row, *l),
            Thresholds::Classwise(v) => prediction_set_classwise(score_row, v),
        }
    }
}

/// `⌈(n+1)(1−α)⌉`, robust to the product landing a hair above an integer.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let x = (n + 1) as f64 * (1.0 - alpha);
    let k = (x - 1e-12 * (n + 1) as f64).ceil();
    k.max(1.0) as usize
}

impl ConformalCalibrator {
    pub fn new(mut scores: Vec<f64>, alpha: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyCalibrator);
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha={alpha} must lie in (0, 1)")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Validation("calibration scores must be finite".into()));
        }
        scores.sort_by(f64::total_cmp);
        Ok(Self { scores, alpha })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn max(&self) -> f64 {
        *self.scores.last().expect("nonempty")
    }

    /// The `⌈(n+1)(1−α)⌉`-th smallest score.
    pub fn conformal_quantile(&self) -> Result<f64> {
        let n = self.scores.len();
        let k = quantile_rank(n, self.alpha);
        if k > n {
            return Err(Error::InsufficientCalibration {
                required: ((1.0 / self.alpha).ceil() as usize).saturating_sub(1),
                available: n,
                alpha: self.alpha,
            });
        }
        Ok(self.scores[k - 1])
    }

    /// Number of calibration scores `≤ λ`.
    pub fn count_at_most(&self, lambda: f64) -> usize {
        self.scores.partition_point(|&s| s <= lambda)
    }

    /// Coverage interval of the threshold `λ`.
    pub fn inverse_quantile(&self, lambda: f64) -> CoverageInterval {
        CoverageInterval::from_count(self.count_at_most(lambda), self.scores.len())
    }
}

/// Labels whose score is at most `λ`.
pub fn prediction_set(score_row: &[f64], lambda: f64) -> Vec<usize> {
    score_row
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= lambda)
        .map(|(y, _)| y)
        .collect()
}

/// Labels `y` with `s(x, y) ≤ λ_y` under per-label thresholds.
pub fn prediction_set_classwise(score_row: &[f64], lambdas: &[f64]) -> Vec<usize> {
    score_row
        .iter()
        .zip(lambdas)
        .enumerate()
        .filter(|(_, (s, l))| s <= l)
        .map(|(y, _)| y)
        .collect()
}

/// Sorted `{s(x_i, ỹ) : i ∈ items}`; calibrating on these gives the usual
/// guarantee for the fixed label `ỹ`.
pub fn fixed_label_scores(table: &ScoreTable, items: &[usize], label: usize) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::EmptyCalibrator);
    }
    let mut out: Vec<f64> = items.iter().map(|&i| table.get(i, label)).collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ninths() -> Vec<f64> {
        (1..=9).map(|i| i as f64 / 10.0).collect()
    }

    #[test]
    fn quantile_examples() {
        let c = ConformalCalibrator::new(ninths(), 0.5).unwrap();
        assert_eq!(c.conformal_quantile().unwrap(), 0.5);
        let c = ConformalCalibrator::new(ninths(), 0.1).unwrap();
        assert_eq!(c.conformal_quantile().unwrap(), 0.9);
        let c = ConformalCalibrator::new(ninths(), 0.05).unwrap();
        match c.conformal_quantile().unwrap_err() {
            Error::InsufficientCalibration { required, available, .. } => {
                assert_eq!(available, 9);
                assert_eq!(required, 19);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn quantile_rank_is_exact_on_integer_products() {
        assert_eq!(quantile_rank(9, 0.1), 9);
        assert_eq!(quantile_rank(99, 0.1), 90);
        assert_eq!(quantile_rank(999, 0.1), 900);
        assert_eq!(quantile_rank(1000, 0.1), 901);
        assert_eq!(quantile_rank(19, 0.05), 19);
    }

    #[test]
    fn inverse_quantile_examples() {
        let c = ConformalCalibrator::new(ninths(), 0.1).unwrap();
        let iv = c.inverse_quantile(0.45);
        assert_eq!((iv.lower, iv.upper), (0.4, 0.5));
        let iv = c.inverse_quantile(0.0);
        assert_eq!((iv.lower, iv.upper), (0.0, 0.1));
        let iv = c.inverse_quantile(0.9);
        assert_eq!((iv.lower, iv.upper), (0.9, 1.0));
        assert!((iv.width - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_calibrator_is_an_error() {
        assert!(matches!(ConformalCalibrator::new(vec![], 0.1), Err(Error::EmptyCalibrator)));
    }

    #[test]
    fn prediction_set_examples() {
        let row = [0.2, 0.5, 0.9];
        assert_eq!(prediction_set(&row, 0.5), vec![0, 1]);
        assert!(prediction_set(&row, f64::NEG_INFINITY).is_empty());
        assert_eq!(prediction_set(&row, 0.9), vec![0, 1, 2]);
        assert_eq!(prediction_set_classwise(&row, &[0.1, 0.5, 1.0]), vec![1, 2]);
    }

    #[test]
    fn fixed_label_examples() {
        let t = ScoreTable::from_rows(&[vec![0.1, 0.9], vec![0.3, 0.7]]).unwrap();
        assert_eq!(fixed_label_scores(&t, &[0, 1], 1).unwrap(), vec![0.7, 0.9]);
        assert_eq!(fixed_label_scores(&t, &[1], 0).unwrap(), vec![0.3]);
        assert!(fixed_label_scores(&t, &[], 0).is_err());
    }

    proptest! {
        #[test]
        fn quantile_inverse_duality(
            raw in proptest::collection::btree_set(0u32..100_000, 1..80),
            alpha in 0.01f64..0.99,
        ) {
            let scores: Vec<f64> = raw.iter().map(|&v| v as f64 / 100_000.0).collect();
            let n = scores.len();
            let c = ConformalCalibrator::new(scores.clone(), alpha).unwrap();
            if let Ok(q) = c.conformal_quantile() {
                let iv = c.inverse_quantile(q);
                prop_assert!(iv.lower >= 1.0 - alpha - 1.0 / (n + 1) as f64 - 1e-12);
                // Distinct scores: the count at q̂ is exactly k, and the
                // k-th order statistic is recovered from it.
                let k = c.count_at_most(q);
                prop_assert_eq!(k, quantile_rank(n, alpha));
                prop_assert_eq!(c.scores()[k - 1], q);
            }
        }

        #[test]
        fn monotone_in_lambda(
            scores in proptest::collection::vec(0.0f64..1.0, 1..40),
            row in proptest::collection::vec(0.0f64..1.0, 5),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let c = ConformalCalibrator::new(scores, 0.1).unwrap();
            let (i1, i2) = (c.inverse_quantile(lo), c.inverse_quantile(hi));
            prop_assert!(i1.lower <= i2.lower && i1.upper <= i2.upper);
            let s1 = prediction_set(&row, lo);
            let s2 = prediction_set(&row, hi);
            prop_assert!(s1.iter().all(|y| s2.contains(y)));
            prop_assert!((i1.upper - i1.lower - i1.width).abs() < 1e-12);
        }
    }
}
