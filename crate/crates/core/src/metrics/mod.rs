//! Per-(group, label) coverages and the disparity checks built on them.
//!
//! A slice is the set of evaluation items passing a metric's filter for one
//! `(g, ỹ)` pair. Its coverage counts how many slice items have `ỹ` in their
//! prediction set. Two estimates of a slice's coverage are supported:
//!
//! * conservative: `covered/(m+1)` with interval width `1/(m+1)`, used for
//!   calibration-time decisions;
//! * empirical: `covered/m` with zero width, used to report held-out
//!   behavior.

mod parity;

pub use parity::{
    decompose_predictive_parity, label_distributions, ppv_interval, predictive_parity_feasibility,
    tv_distance, tv_distances, tv_plus_distance, LabelDistribution, ParityFeasibility,
    PpvDecomposition, TvMatrix,
};

use serde::{Deserialize, Serialize};

use crate::conformal::{CoverageInterval, Thresholds};
use crate::data::{filter_items, Dataset, DegeneratePolicy, FairnessSpec, Metric, Mode, RatioForm, SliceCondition, Split};
use crate::error::{Error, Result};
use crate::scores::ScoreTable;

/// Membership test for prediction sets, whatever produced them.
pub trait SetMembership: Sync {
    fn contains(&self, item: usize, label: usize) -> bool;
}

/// Sets induced by thresholding a score table.
pub struct ThresholdSets<'a> {
    pub table: &'a ScoreTable,
    pub thresholds: &'a Thresholds,
}

impl SetMembership for ThresholdSets<'_> {
    #[inline]
    fn contains(&self, item: usize, label: usize) -> bool {
        self.table.get(item, label) <= self.thresholds.for_label(label)
    }
}

/// Identity of a slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SliceKey {
    pub label: usize,
    pub condition: SliceCondition,
    pub group: usize,
}

/// A slice that had no evaluation items and was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSlice {
    pub key: SliceKey,
    pub group_name: String,
}

/// Which items belong to which slice, fixed before any threshold is tried.
#[derive(Debug, Clone)]
pub struct SliceLayout {
    pub keys: Vec<SliceKey>,
    pub group_names: Vec<String>,
    pub members: Vec<Vec<usize>>,
    pub skipped: Vec<SkippedSlice>,
}

impl SliceLayout {
    /// Filter `items` into slices for every `(ỹ, condition, g)` the metric
    /// needs, ordered label-major then condition then group.
    pub fn build(dataset: &Dataset, spec: &FairnessSpec, items: &[usize]) -> Result<Self> {
        let groups = dataset.groups();
        let group_names = groups.group_names();
        let mut keys = Vec::new();
        let mut members = Vec::new();
        let mut skipped = Vec::new();
        for &label in spec.labels.positive() {
            for &condition in spec.metric.conditions() {
                for (group, name) in group_names.iter().enumerate() {
                    let key = SliceKey { label, condition, group };
                    let m = filter_items(dataset, items, condition, group, label);
                    if m.is_empty() {
                        match spec.degenerate {
                            DegeneratePolicy::Error => {
                                return Err(Error::DegenerateSlice {
                                    group: name.clone(),
                                    label,
                                    condition: condition.to_string(),
                                })
                            }
                            DegeneratePolicy::SkipWithWarning => {
                                log::warn!(
                                    "skipping empty slice (group {name}, label {label}, {condition})"
                                );
                                skipped.push(SkippedSlice { key, group_name: name.clone() });
                                continue;
                            }
                        }
                    }
                    keys.push(key);
                    members.push(m);
                }
            }
        }
        Ok(Self { keys, group_names, members, skipped })
    }

    /// Layout over the calibration split.
    pub fn calibration(dataset: &Dataset, spec: &FairnessSpec) -> Result<Self> {
        Self::build(dataset, spec, &dataset.split_indices(Split::Calib))
    }

    /// Count set memberships for every slice.
    pub fn count(&self, dataset: &Dataset, sets: &dyn SetMembership) -> Vec<GroupLabelSlice> {
        self.keys
            .iter()
            .zip(&self.members)
            .map(|(key, members)| {
                let mut covered = 0;
                let mut with_label = 0;
                let mut covered_with_label = 0;
                for &i in members {
                    let hit = sets.contains(i, key.label);
                    let is_label = dataset.label(i) == Some(key.label);
                    covered += usize::from(hit);
                    with_label += usize::from(is_label);
                    covered_with_label += usize::from(hit && is_label);
                }
                GroupLabelSlice::new(
                    *key,
                    self.group_names[key.group].clone(),
                    members.len(),
                    covered,
                    with_label,
                    covered_with_label,
                )
            })
            .collect()
    }
}

/// Coverage bookkeeping for one `(g, ỹ)` slice at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLabelSlice {
    pub key: SliceKey,
    pub group_name: String,
    /// Slice size `m`.
    pub size: usize,
    /// Items with `ỹ` in their set.
    pub covered: usize,
    /// Items whose true label is `ỹ`.
    pub with_label: usize,
    pub covered_with_label: usize,
    /// Inverse-quantile interval of the fixed-label scores.
    pub coverage: CoverageInterval,
}

impl GroupLabelSlice {
    pub fn new(
        key: SliceKey,
        group_name: String,
        size: usize,
        covered: usize,
        with_label: usize,
        covered_with_label: usize,
    ) -> Self {
        Self {
            key,
            group_name,
            size,
            covered,
            with_label,
            covered_with_label,
            coverage: CoverageInterval::from_count(covered, size),
        }
    }

    pub fn width(&self) -> f64 {
        self.coverage.width
    }

    fn estimate(&self, estimate: Estimate) -> (f64, f64) {
        match estimate {
            Estimate::Conservative => (self.coverage.lower, self.coverage.width),
            Estimate::Empirical => (self.covered as f64 / self.size as f64, 0.0),
        }
    }
}

/// Coverages of every calibration slice at threshold `λ`.
pub fn slice_coverages(
    table: &ScoreTable,
    dataset: &Dataset,
    spec: &FairnessSpec,
    lambda: f64,
) -> Result<Vec<GroupLabelSlice>> {
    let layout = SliceLayout::calibration(dataset, spec)?;
    let thresholds = Thresholds::Global(lambda);
    Ok(layout.count(dataset, &ThresholdSets { table, thresholds: &thresholds }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate {
    Conservative,
    Empirical,
}

/// Disparity for one positive label (and, for equalized odds, one component).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDisparity {
    pub label: usize,
    pub component: Metric,
    /// Smallest per-group quantity entering the check (coverage lower bound,
    /// proxy value, or PPV lower bound).
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Gap (difference mode) or ratio (ratio mode).
    pub value: f64,
    pub satisfied: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub metric: Metric,
    pub mode: Mode,
    pub closeness: f64,
    pub estimate: Estimate,
    pub labels: Vec<LabelDisparity>,
    /// Max gap over labels (difference) or min ratio (ratio).
    pub worst_disparity: f64,
    pub satisfied: bool,
    pub slices: Vec<GroupLabelSlice>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_slices: Vec<SkippedSlice>,
}

fn ratio(spec: &FairnessSpec, alpha_min: f64, alpha_max: f64) -> f64 {
    match spec.ratio_form {
        RatioForm::Miscoverage => {
            let num = 1.0 - alpha_max;
            let den = 1.0 - alpha_min;
            if den == 0.0 {
                if num == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                num / den
            }
        }
        RatioForm::Coverage => {
            if alpha_max <= 0.0 {
                1.0
            } else {
                alpha_min.max(0.0) / alpha_max
            }
        }
    }
}

fn coverage_check(
    spec: &FairnessSpec,
    component: Metric,
    label: usize,
    slices: &[&GroupLabelSlice],
    estimate: Estimate,
) -> LabelDisparity {
    if slices.is_empty() {
        return LabelDisparity {
            label,
            component,
            alpha_min: f64::NAN,
            alpha_max: f64::NAN,
            value: if spec.mode == Mode::Ratio { 1.0 } else { 0.0 },
            satisfied: true,
            missing_groups: Vec::new(),
        };
    }
    let mut alpha_min = f64::INFINITY;
    let mut alpha_max = f64::NEG_INFINITY;
    for s in slices {
        let (cov, width) = s.estimate(estimate);
        alpha_min = alpha_min.min(cov - width);
        alpha_max = alpha_max.max(cov);
    }
    let (value, satisfied) = match spec.mode {
        Mode::Difference => {
            let gap = alpha_max - alpha_min;
            (gap, !(gap > spec.closeness))
        }
        Mode::Ratio => {
            let r = ratio(spec, alpha_min, alpha_max);
            (r, !(r < spec.closeness))
        }
    };
    LabelDisparity {
        label,
        component,
        alpha_min,
        alpha_max,
        value,
        satisfied,
        missing_groups: Vec::new(),
    }
}

fn spread_check(
    spec: &FairnessSpec,
    label: usize,
    values: &[(f64, f64)],
    missing: Vec<String>,
) -> LabelDisparity {
    let alpha_min = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let alpha_max = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let value = if values.is_empty() { 0.0 } else { alpha_max - alpha_min };
    LabelDisparity {
        label,
        component: spec.metric,
        alpha_min,
        alpha_max,
        value,
        satisfied: missing.is_empty() && !(value > spec.closeness),
        missing_groups: missing,
    }
}

/// Proxy `PPV − Pr[Y = ỹ | g]` per group, from demographic-parity slices.
fn proxy_check(spec: &FairnessSpec, label: usize, slices: &[&GroupLabelSlice]) -> LabelDisparity {
    let mut values = Vec::new();
    let mut missing = Vec::new();
    for s in slices {
        if s.covered == 0 {
            missing.push(s.group_name.clone());
            continue;
        }
        let ppv = s.covered_with_label as f64 / s.covered as f64;
        let prior = s.with_label as f64 / s.size as f64;
        let proxy = ppv - prior;
        values.push((proxy, proxy));
    }
    spread_check(spec, label, &values, missing)
}

/// Predictive parity from equal-opportunity and demographic-parity slices.
fn ppv_check(
    spec: &FairnessSpec,
    label: usize,
    eo: &[&GroupLabelSlice],
    dp: &[&GroupLabelSlice],
    estimate: Estimate,
) -> LabelDisparity {
    let mut values = Vec::new();
    let mut missing = Vec::new();
    for d in dp {
        let Some(e) = eo.iter().find(|e| e.key.group == d.key.group) else {
            missing.push(d.group_name.clone());
            continue;
        };
        match estimate {
            Estimate::Conservative => {
                let dec = decompose_predictive_parity(e, d);
                values.push((dec.ppv_lower, dec.ppv_upper));
            }
            Estimate::Empirical => {
                if d.covered == 0 {
                    missing.push(d.group_name.clone());
                } else {
                    let ppv = d.covered_with_label as f64 / d.covered as f64;
                    values.push((ppv, ppv));
                }
            }
        }
    }
    spread_check(spec, label, &values, missing)
}

fn evaluate(
    slices: Vec<GroupLabelSlice>,
    skipped: Vec<SkippedSlice>,
    spec: &FairnessSpec,
    estimate: Estimate,
) -> DisparityReport {
    let mut labels = Vec::new();
    let pick = |label: usize, cond: SliceCondition| -> Vec<&GroupLabelSlice> {
        slices
            .iter()
            .filter(|s| s.key.label == label && s.key.condition == cond)
            .collect()
    };
    for &label in spec.labels.positive() {
        match spec.metric {
            Metric::DemographicParity
            | Metric::EqualOpportunity
            | Metric::PredictiveEquality
            | Metric::DisparateImpact => {
                let cond = spec.metric.conditions()[0];
                labels.push(coverage_check(spec, spec.metric, label, &pick(label, cond), estimate));
            }
            Metric::EqualizedOdds => {
                labels.push(coverage_check(
                    spec,
                    Metric::EqualOpportunity,
                    label,
                    &pick(label, SliceCondition::InGroupWithLabel),
                    estimate,
                ));
                labels.push(coverage_check(
                    spec,
                    Metric::PredictiveEquality,
                    label,
                    &pick(label, SliceCondition::InGroupWithoutLabel),
                    estimate,
                ));
            }
            Metric::PredictiveParityProxy => {
                labels.push(proxy_check(spec, label, &pick(label, SliceCondition::InGroup)));
            }
            Metric::PredictiveParity => {
                labels.push(ppv_check(
                    spec,
                    label,
                    &pick(label, SliceCondition::InGroupWithLabel),
                    &pick(label, SliceCondition::InGroup),
                    estimate,
                ));
            }
        }
    }
    let worst_disparity = match spec.mode {
        Mode::Difference => labels.iter().map(|l| l.value).fold(f64::NEG_INFINITY, f64::max),
        Mode::Ratio => labels.iter().map(|l| l.value).fold(f64::INFINITY, f64::min),
    };
    let satisfied = labels.iter().all(|l| l.satisfied);
    DisparityReport {
        metric: spec.metric,
        mode: spec.mode,
        closeness: spec.closeness,
        estimate,
        labels,
        worst_disparity,
        satisfied,
        slices,
        skipped_slices: skipped,
    }
}

/// Calibration-time check: per label, `α_min = min_g(coverage − width)`,
/// `α_max = max_g coverage`; difference mode needs `α_max − α_min ≤ c`,
/// ratio mode needs the ratio to be at least `c`.
pub fn check_disparity(slices: Vec<GroupLabelSlice>, spec: &FairnessSpec) -> DisparityReport {
    evaluate(slices, Vec::new(), spec, Estimate::Conservative)
}

/// Like [`check_disparity`] but carrying the layout's skipped slices.
pub fn check_disparity_with_skipped(
    slices: Vec<GroupLabelSlice>,
    skipped: Vec<SkippedSlice>,
    spec: &FairnessSpec,
) -> DisparityReport {
    evaluate(slices, skipped, spec, Estimate::Conservative)
}

/// Point-estimate disparity (plain fractions, no interval widths), for
/// held-out evaluation.
pub fn empirical_disparity(slices: Vec<GroupLabelSlice>, spec: &FairnessSpec) -> DisparityReport {
    evaluate(slices, Vec::new(), spec, Estimate::Empirical)
}

/// Evaluate arbitrary prediction sets on `items` under `spec`.
pub fn evaluate_sets(
    dataset: &Dataset,
    spec: &FairnessSpec,
    items: &[usize],
    sets: &dyn SetMembership,
    estimate: Estimate,
) -> Result<DisparityReport> {
    let layout = SliceLayout::build(dataset, spec, items)?;
    let slices = layout.count(dataset, sets);
    Ok(evaluate(slices, layout.skipped, spec, estimate))
}

/// Fraction of labeled `items` whose set contains the true label.
pub fn marginal_coverage(dataset: &Dataset, items: &[usize], sets: &dyn SetMembership) -> f64 {
    let mut n = 0usize;
    let mut hit = 0usize;
    for &i in items {
        if let Some(y) = dataset.label(i) {
            n += 1;
            hit += usize::from(sets.contains(i, y));
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        hit as f64 / n as f64
    }
}

/// Mean prediction-set size over `items`.
pub fn efficiency(dataset: &Dataset, items: &[usize], sets: &dyn SetMembership) -> f64 {
    if items.is_empty() {
        return f64::NAN;
    }
    let k = dataset.num_classes();
    let total: usize = items
        .iter()
        .map(|&i| (0..k).filter(|&y| sets.contains(i, y)).count())
        .sum();
    total as f64 / items.len() as f64
}
