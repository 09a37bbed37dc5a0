//! Predictive parity: label-distribution distances, the feasibility bound
//! they imply, and the PPV interval built from two coverage intervals.

use serde::{Deserialize, Serialize};

use super::GroupLabelSlice;
use crate::data::{Dataset, FairnessSpec, Split};
use crate::error::{Error, Result};

/// Empirical label distribution `W_g` of one group on the calibration split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub group: usize,
    pub group_name: String,
    pub size: usize,
    pub probs: Vec<f64>,
}

/// Per-group label distributions over calibration items.
pub fn label_distributions(dataset: &Dataset) -> Result<Vec<LabelDistribution>> {
    let groups = dataset.groups();
    let k = dataset.num_classes();
    let mut counts = vec![vec![0usize; k]; groups.num_groups()];
    for i in dataset.split_indices(Split::Calib) {
        if let Some(y) = dataset.label(i) {
            counts[groups.group_of(i)][y] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(g, c)| {
            let size: usize = c.iter().sum();
            if size == 0 {
                return Err(Error::EmptyGroup(groups.group_name(g)));
            }
            Ok(LabelDistribution {
                group: g,
                group_name: groups.group_name(g),
                size,
                probs: c.iter().map(|&n| n as f64 / size as f64).collect(),
            })
        })
        .collect()
}

/// `½ Σ_k |p_k − q_k|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `sup_{k ∈ positive} |p_k − q_k|`, zero for an empty label set.
pub fn tv_plus_distance(p: &[f64], q: &[f64], positive: &[usize]) -> f64 {
    positive.iter().map(|&k| (p[k] - q[k]).abs()).fold(0.0, f64::max)
}

/// Pairwise distances between group label distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvMatrix {
    pub group_names: Vec<String>,
    pub tv: Vec<Vec<f64>>,
    pub tv_plus: Vec<Vec<f64>>,
}

pub fn tv_distances(dataset: &Dataset, positive: &[usize]) -> Result<TvMatrix> {
    let dists = label_distributions(dataset)?;
    let n = dists.len();
    let mut tv = vec![vec![0.0; n]; n];
    let mut tv_plus = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            tv[i][j] = tv_distance(&dists[i].probs, &dists[j].probs);
            tv_plus[i][j] = tv_plus_distance(&dists[i].probs, &dists[j].probs, positive);
        }
    }
    Ok(TvMatrix {
        group_names: dists.into_iter().map(|d| d.group_name).collect(),
        tv,
        tv_plus,
    })
}

/// Smallest closeness for which the top threshold is known to satisfy
/// predictive parity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityFeasibility {
    pub max_tv: f64,
    pub max_tv_plus: f64,
    pub matrix: TvMatrix,
}

impl ParityFeasibility {
    /// True when `c` is at least the bound over positive labels.
    pub fn guaranteed(&self, c: f64) -> bool {
        c >= self.max_tv_plus
    }
}

pub fn predictive_parity_feasibility(dataset: &Dataset, spec: &FairnessSpec) -> Result<ParityFeasibility> {
    let matrix = tv_distances(dataset, spec.labels.positive())?;
    let max_of = |m: &Vec<Vec<f64>>| m.iter().flatten().copied().fold(0.0, f64::max);
    Ok(ParityFeasibility {
        max_tv: max_of(&matrix.tv),
        max_tv_plus: max_of(&matrix.tv_plus),
        matrix,
    })
}

/// PPV of one `(g, ỹ)` as equal-opportunity coverage over demographic-parity
/// coverage, times the prior `Pr[Y = ỹ | g]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpvDecomposition {
    pub equal_opportunity: crate::conformal::CoverageInterval,
    pub demographic_parity: crate::conformal::CoverageInterval,
    pub prior: f64,
    pub ppv_lower: f64,
    pub ppv_upper: f64,
    /// Set when the demographic-parity lower bound is zero, so the upper
    /// bound carries no information.
    pub uninformative: bool,
}

/// PPV bounds from the two slices of one `(g, ỹ)`. The upper bound is
/// clamped to 1 after multiplying by the prior.
pub fn ppv_interval(eo: &GroupLabelSlice, dp: &GroupLabelSlice) -> (f64, f64, bool) {
    let prior = dp.with_label as f64 / dp.size as f64;
    let lower = eo.coverage.lower / dp.coverage.upper * prior;
    if dp.coverage.lower == 0.0 {
        return (lower, 1.0, true);
    }
    let upper = (eo.coverage.upper / dp.coverage.lower * prior).min(1.0);
    (lower, upper, false)
}

pub fn decompose_predictive_parity(eo: &GroupLabelSlice, dp: &GroupLabelSlice) -> PpvDecomposition {
    let (ppv_lower, ppv_upper, uninformative) = ppv_interval(eo, dp);
    PpvDecomposition {
        equal_opportunity: eo.coverage,
        demographic_parity: dp.coverage,
        prior: dp.with_label as f64 / dp.size as f64,
        ppv_lower,
        ppv_upper,
        uninformative,
    }
}
