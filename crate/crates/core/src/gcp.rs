//! BatchGCP baseline: a threshold `f + Σ_{g ∋ x} λ_g` with one offset per
//! group, fit by minimizing the pinball loss of the true-label scores.
//!
//! Unlike the threshold search, prediction sets here depend on the item's
//! group, so group membership must be known at inference time.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FairnessSpec, Metric, Split};
use crate::error::{Error, Result};
use crate::metrics::{efficiency, evaluate_sets, marginal_coverage, DisparityReport, Estimate, SetMembership};
use crate::scores::ScoreTable;
use crate::search::calibrator;

pub const MAX_ITERATIONS: usize = 10_000;
pub const TOLERANCE: f64 = 1e-8;
/// Iterations without a best-objective gain above `TOLERANCE` before stopping.
pub const PATIENCE: usize = 200;

/// `(s−τ)(1−α)·1[s>τ] + (τ−s)α·1[s≤τ]`.
#[inline]
pub fn pinball_loss(tau: f64, s: f64, alpha: f64) -> f64 {
    if s > tau {
        (s - tau) * (1.0 - alpha)
    } else {
        (tau - s) * alpha
    }
}

/// Fitting problem: true-label scores and, per item, the groups it belongs to.
#[derive(Debug, Clone)]
pub struct GcpProblem {
    pub scores: Vec<f64>,
    pub membership: Vec<Vec<usize>>,
    pub num_groups: usize,
    pub alpha: f64,
    pub base: f64,
}

impl GcpProblem {
    pub fn threshold(&self, item: usize, lambda: &[f64]) -> f64 {
        self.base + self.membership[item].iter().map(|&g| lambda[g]).sum::<f64>()
    }

    /// Mean pinball loss at offsets `lambda`.
    pub fn objective(&self, lambda: &[f64]) -> f64 {
        let total: f64 = self
            .scores
            .iter()
            .enumerate()
            .map(|(i, &s)| pinball_loss(self.threshold(i, lambda), s, self.alpha))
            .sum();
        total / self.scores.len() as f64
    }

    fn subgradient(&self, lambda: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.num_groups];
        for (i, &s) in self.scores.iter().enumerate() {
            let d = if s > self.threshold(i, lambda) { -(1.0 - self.alpha) } else { self.alpha };
            for &g in &self.membership[i] {
                grad[g] += d;
            }
        }
        let n = self.scores.len() as f64;
        grad.iter_mut().for_each(|v| *v /= n);
        grad
    }

    /// Exact minimization over `λ_g` with the other offsets fixed: the
    /// `⌈(1−α)m⌉`-th smallest residual among the group's items.
    fn coordinate_min(&self, lambda: &[f64], g: usize) -> Option<f64> {
        let mut r: Vec<f64> = (0..self.scores.len())
            .filter(|&i| self.membership[i].contains(&g))
            .map(|i| self.scores[i] - (self.threshold(i, lambda) - lambda[g]))
            .collect();
        if r.is_empty() {
            return None;
        }
        r.sort_by(f64::total_cmp);
        let m = r.len();
        let k = ((1.0 - self.alpha) * m as f64 - 1e-12 * m as f64).ceil().max(1.0) as usize;
        Some(r[k.min(m) - 1])
    }
}

/// Fitted group-dependent threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcpThreshold {
    pub base: f64,
    pub alpha: f64,
    pub group_names: Vec<String>,
    pub lambda: Vec<f64>,
    /// Item belongs to every `(attribute, value)` group rather than to one
    /// group of the dataset's grouping.
    pub overlapping: bool,
    pub objective: f64,
    pub iterations: usize,
    /// Set when the iteration cap was reached before the stopping rule.
    pub hit_iteration_cap: bool,
}

/// Full-batch subgradient descent with step `c₀/√t`, keeping the best
/// iterate, then a pass of exact per-group minimization that is kept only
/// if it lowers the objective.
pub fn fit(problem: &GcpProblem) -> (Vec<f64>, f64, usize, bool) {
    let mut lambda = vec![0.0; problem.num_groups];
    let initial = problem.objective(&lambda);
    let mean_abs = problem.scores.iter().map(|s| s.abs()).sum::<f64>() / problem.scores.len() as f64;
    let c0 = if mean_abs > 0.0 { initial / mean_abs } else { initial };
    let mut best = lambda.clone();
    let mut best_obj = initial;
    let mut stall = 0;
    let mut iterations = 0;
    let mut capped = true;
    if c0 > 0.0 {
        for t in 1..=MAX_ITERATIONS {
            iterations = t;
            let grad = problem.subgradient(&lambda);
            let step = c0 / (t as f64).sqrt();
            for (l, g) in lambda.iter_mut().zip(&grad) {
                *l -= step * g;
            }
            let obj = problem.objective(&lambda);
            if obj < best_obj - TOLERANCE {
                stall = 0;
            } else {
                stall += 1;
            }
            if obj < best_obj {
                best_obj = obj;
                best.clone_from(&lambda);
            }
            if stall >= PATIENCE {
                capped = false;
                break;
            }
        }
    } else {
        capped = false;
    }
    for _ in 0..100 {
        let mut improved = false;
        for g in 0..problem.num_groups {
            let Some(v) = problem.coordinate_min(&best, g) else { continue };
            let mut trial = best.clone();
            trial[g] = v;
            let obj = problem.objective(&trial);
            if obj < best_obj - 1e-15 {
                best = trial;
                best_obj = obj;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    (best, best_obj, iterations, capped)
}

/// Group names and per-item memberships.
pub fn group_membership(dataset: &Dataset, overlapping: bool) -> (Vec<String>, Vec<Vec<usize>>) {
    let groups = dataset.groups();
    if !overlapping {
        let names = groups.group_names();
        let m = (0..dataset.len()).map(|i| vec![groups.group_of(i)]).collect();
        return (names, m);
    }
    let mut names = Vec::new();
    let mut offset = Vec::new();
    for (a, attr) in groups.attribute_names().iter().enumerate() {
        offset.push(names.len());
        for v in &groups.attribute_values()[a] {
            names.push(format!("{attr}={v}"));
        }
    }
    let m = (0..dataset.len())
        .map(|i| groups.item_values(i).iter().enumerate().map(|(a, &v)| offset[a] + v).collect())
        .collect();
    (names, m)
}

impl GcpProblem {
    /// Problem over labeled calibration items with `f` set to the conformal
    /// quantile. Returns the group names alongside.
    pub fn from_dataset(
        table: &ScoreTable,
        dataset: &Dataset,
        alpha: f64,
        overlapping: bool,
    ) -> Result<(Self, Vec<String>)> {
        let base = calibrator(table, dataset, alpha)?.conformal_quantile()?;
        let (names, membership) = group_membership(dataset, overlapping);
        let items: Vec<usize> = dataset
            .split_indices(Split::Calib)
            .into_iter()
            .filter(|&i| dataset.label(i).is_some())
            .collect();
        let mut seen = vec![false; names.len()];
        for &i in &items {
            for &g in &membership[i] {
                seen[g] = true;
            }
        }
        if let Some(g) = seen.iter().position(|s| !s) {
            return Err(Error::EmptyGroup(names[g].clone()));
        }
        let problem = GcpProblem {
            scores: items.iter().map(|&i| table.get(i, dataset.label(i).unwrap())).collect(),
            membership: items.iter().map(|&i| membership[i].clone()).collect(),
            num_groups: names.len(),
            alpha,
            base,
        };
        Ok((problem, names))
    }
}

/// Fit on labeled calibration items; `f` is the conformal quantile.
pub fn fit_batchgcp(table: &ScoreTable, dataset: &Dataset, alpha: f64, overlapping: bool) -> Result<GcpThreshold> {
    let (problem, names) = GcpProblem::from_dataset(table, dataset, alpha, overlapping)?;
    let (lambda, objective, iterations, capped) = fit(&problem);
    if capped {
        log::warn!("group threshold fit stopped at the iteration cap ({MAX_ITERATIONS})");
    }
    Ok(GcpThreshold {
        base: problem.base,
        alpha,
        group_names: names,
        lambda,
        overlapping,
        objective,
        iterations,
        hit_iteration_cap: capped,
    })
}

/// Item-specific thresholds `f + Σ λ_g` over a dataset.
pub struct GcpSets<'a> {
    pub table: &'a ScoreTable,
    pub thresholds: Vec<f64>,
}

impl SetMembership for GcpSets<'_> {
    #[inline]
    fn contains(&self, item: usize, label: usize) -> bool {
        self.table.get(item, label) <= self.thresholds[item]
    }
}

impl GcpThreshold {
    /// Per-item thresholds, matching groups by name.
    pub fn item_thresholds(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        let index: HashMap<&str, usize> = self.group_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let (names, membership) = group_membership(dataset, self.overlapping);
        let map: Vec<Option<usize>> = names.iter().map(|n| index.get(n.as_str()).copied()).collect();
        membership
            .iter()
            .map(|gs| {
                let mut t = self.base;
                for &g in gs {
                    let k = map[g].ok_or_else(|| Error::UnknownGroup(names[g].clone()))?;
                    t += self.lambda[k];
                }
                Ok(t)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCoverage {
    pub group: String,
    pub size: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcpEvaluation {
    pub marginal_coverage: f64,
    pub efficiency: f64,
    pub group_coverage: Vec<GroupCoverage>,
    /// Disparity under the requested spec, point estimates.
    pub report: DisparityReport,
    pub demographic_parity_disparity: f64,
    pub disparate_impact_ratio: f64,
    pub requires_group_at_inference: bool,
}

/// Point-estimate metrics of the fitted threshold on `split`.
pub fn evaluate_batchgcp(
    model: &GcpThreshold,
    table: &ScoreTable,
    dataset: &Dataset,
    spec: &FairnessSpec,
    split: Split,
) -> Result<GcpEvaluation> {
    let sets = GcpSets { table, thresholds: model.item_thresholds(dataset)? };
    let items = dataset.split_indices(split);
    let (names, membership) = group_membership(dataset, model.overlapping);
    let mut hits = vec![0usize; names.len()];
    let mut sizes = vec![0usize; names.len()];
    for &i in &items {
        let Some(y) = dataset.label(i) else { continue };
        for &g in &membership[i] {
            sizes[g] += 1;
            hits[g] += usize::from(sets.contains(i, y));
        }
    }
    let group_coverage = names
        .into_iter()
        .zip(sizes.iter().zip(&hits))
        .map(|(group, (&size, &hit))| GroupCoverage {
            group,
            size,
            coverage: if size == 0 { f64::NAN } else { hit as f64 / size as f64 },
        })
        .collect();
    let report = evaluate_sets(dataset, spec, &items, &sets, Estimate::Empirical)?;
    let dp = evaluate_sets(dataset, &spec.with_metric(Metric::DemographicParity), &items, &sets, Estimate::Empirical)?;
    let di = evaluate_sets(dataset, &spec.with_metric(Metric::DisparateImpact), &items, &sets, Estimate::Empirical)?;
    Ok(GcpEvaluation {
        marginal_coverage: marginal_coverage(dataset, &items, &sets),
        efficiency: efficiency(dataset, &items, &sets),
        group_coverage,
        report,
        demographic_parity_disparity: dp.worst_disparity,
        disparate_impact_ratio: di.worst_disparity,
        requires_group_at_inference: true,
    })
}
