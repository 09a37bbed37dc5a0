//! Threshold search: build the candidate set, test each candidate against a
//! fairness spec, return the smallest one that passes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalCalibrator, Thresholds};
use crate::data::{Dataset, FairnessSpec, Metric, Mode, Split};
use crate::error::{Error, Result};
use crate::metrics::{
    check_disparity_with_skipped, DisparityReport, GroupLabelSlice, SkippedSlice, SliceKey, SliceLayout,
    ThresholdSets,
};
use crate::scores::ScoreTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Derived,
    UserSupplied,
}

/// Sorted, deduplicated candidate thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearchSpace {
    pub candidates: Vec<f64>,
    pub origin: Origin,
    pub q_hat: f64,
    pub max_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    /// Stop at the first satisfying candidate.
    #[default]
    FirstSatisfying,
    /// Evaluate every candidate and keep all verdicts.
    Exhaustive,
}

/// Calibrator over the true-label scores of labeled calibration items.
pub fn calibrator(table: &ScoreTable, dataset: &Dataset, alpha: f64) -> Result<ConformalCalibrator> {
    let scores: Vec<f64> = dataset
        .split_indices(Split::Calib)
        .into_iter()
        .filter_map(|i| dataset.label(i).map(|y| table.get(i, y)))
        .collect();
    ConformalCalibrator::new(scores, alpha)
}

fn sort_dedup(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Candidates in `[q̂, max 𝒮_calib]`: both endpoints plus every calibration
/// score `s(x_i, ỹ)`, `ỹ ∈ 𝒴⁺`, falling in that range. Coverage counts only
/// change at these values, so the scan is exact over the interval. A user
/// grid replaces the derived values; entries below `q̂` are dropped.
pub fn build_lambda_space(
    table: &ScoreTable,
    dataset: &Dataset,
    spec: &FairnessSpec,
    user_grid: Option<&[f64]>,
) -> Result<ThresholdSearchSpace> {
    let cal = calibrator(table, dataset, spec.alpha)?;
    let q_hat = cal.conformal_quantile()?;
    let max_score = cal.max();
    if let Some(grid) = user_grid {
        if grid.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("lambda grid values must be finite".into()));
        }
        let candidates = sort_dedup(grid.iter().copied().filter(|&l| l >= q_hat).collect());
        if candidates.is_empty() {
            return Err(Error::Config(format!("no lambda grid value is at or above q̂ = {q_hat}")));
        }
        return Ok(ThresholdSearchSpace { candidates, origin: Origin::UserSupplied, q_hat, max_score });
    }
    let mut v = vec![q_hat, max_score];
    for i in dataset.split_indices(Split::Calib) {
        if dataset.label(i).is_none() {
            continue;
        }
        for &y in spec.labels.positive() {
            let s = table.get(i, y);
            if s >= q_hat && s <= max_score {
                v.push(s);
            }
        }
    }
    Ok(ThresholdSearchSpace { candidates: sort_dedup(v), origin: Origin::Derived, q_hat, max_score })
}

/// Slice counts at `λ` recomputed from scratch, then checked.
pub fn satisfy_lambda(table: &ScoreTable, dataset: &Dataset, spec: &FairnessSpec, lambda: f64) -> Result<DisparityReport> {
    satisfy_thresholds(table, dataset, spec, &Thresholds::Global(lambda))
}

pub fn satisfy_thresholds(
    table: &ScoreTable,
    dataset: &Dataset,
    spec: &FairnessSpec,
    thresholds: &Thresholds,
) -> Result<DisparityReport> {
    let layout = SliceLayout::calibration(dataset, spec)?;
    let slices = layout.count(dataset, &ThresholdSets { table, thresholds });
    Ok(check_disparity_with_skipped(slices, layout.skipped, spec))
}

struct PreparedSlice {
    key: SliceKey,
    group_name: String,
    with_label: usize,
    /// Scores of `ỹ` for slice members, ascending.
    scores: Vec<f64>,
    /// `label_prefix[j]`: members among the first `j` whose label is `ỹ`.
    label_prefix: Vec<usize>,
}

/// Slices with sorted scores, so each candidate costs a binary search per slice.
pub struct Engine<'a> {
    spec: &'a FairnessSpec,
    slices: Vec<PreparedSlice>,
    skipped: Vec<SkippedSlice>,
}

impl<'a> Engine<'a> {
    pub fn new(table: &ScoreTable, dataset: &Dataset, spec: &'a FairnessSpec) -> Result<Self> {
        let layout = SliceLayout::calibration(dataset, spec)?;
        let slices = layout
            .keys
            .iter()
            .zip(&layout.members)
            .map(|(key, members)| {
                let mut pairs: Vec<(f64, bool)> = members
                    .iter()
                    .map(|&i| (table.get(i, key.label), dataset.label(i) == Some(key.label)))
                    .collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut label_prefix = Vec::with_capacity(pairs.len() + 1);
                label_prefix.push(0);
                let mut acc = 0;
                for p in &pairs {
                    acc += usize::from(p.1);
                    label_prefix.push(acc);
                }
                PreparedSlice {
                    key: *key,
                    group_name: layout.group_names[key.group].clone(),
                    with_label: acc,
                    scores: pairs.into_iter().map(|p| p.0).collect(),
                    label_prefix,
                }
            })
            .collect();
        Ok(Self { spec, slices, skipped: layout.skipped })
    }

    pub fn evaluate(&self, thresholds: &Thresholds) -> DisparityReport {
        let slices = self
            .slices
            .iter()
            .map(|p| {
                let lambda = thresholds.for_label(p.key.label);
                let covered = p.scores.partition_point(|&s| s <= lambda);
                GroupLabelSlice::new(
                    p.key,
                    p.group_name.clone(),
                    p.scores.len(),
                    covered,
                    p.with_label,
                    p.label_prefix[covered],
                )
            })
            .collect();
        check_disparity_with_skipped(slices, self.skipped.clone(), self.spec)
    }

    pub fn evaluate_lambda(&self, lambda: f64) -> DisparityReport {
        self.evaluate(&Thresholds::Global(lambda))
    }
}

/// Verdict for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub lambda: f64,
    pub satisfied: bool,
    pub worst_disparity: f64,
}

/// Per-label outcome of a classwise search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOutcome {
    pub label: usize,
    pub lambda: Option<f64>,
    pub satisfying_count: Option<usize>,
    /// Smallest-disparity candidate when nothing satisfies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_candidate: Option<CandidateVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    /// `None` when no candidate satisfies the spec.
    pub lambda_opt: Option<Thresholds>,
    pub q_hat: f64,
    pub alpha: f64,
    /// Marginal coverage lower bound `1 − α` (holds since every λ ≥ q̂).
    pub guaranteed_marginal_coverage: f64,
    pub origin: Origin,
    pub num_candidates: usize,
    /// Size of the satisfying set, known only after an exhaustive scan.
    pub satisfying_count: Option<usize>,
    /// Disparity at `λ_opt`, or at the best candidate when nothing satisfies.
    pub report: DisparityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_candidate: Option<CandidateVerdict>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<CandidateVerdict>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<ClassOutcome>,
}

impl ThresholdResult {
    pub fn satisfied(&self) -> bool {
        self.lambda_opt.is_some()
    }

    pub fn thresholds_or_qhat(&self) -> Thresholds {
        self.lambda_opt.clone().unwrap_or(Thresholds::Global(self.q_hat))
    }
}

fn better(mode: Mode, a: f64, b: f64) -> bool {
    match mode {
        Mode::Difference => a < b,
        Mode::Ratio => a > b,
    }
}

struct Scan {
    opt: Option<usize>,
    satisfying_count: Option<usize>,
    verdicts: Vec<CandidateVerdict>,
    best: Option<CandidateVerdict>,
}

fn verdict(lambda: f64, r: &DisparityReport) -> CandidateVerdict {
    CandidateVerdict { lambda, satisfied: r.satisfied, worst_disparity: r.worst_disparity }
}

fn best_of(mode: Mode, verdicts: &[CandidateVerdict]) -> Option<CandidateVerdict> {
    let mut best: Option<CandidateVerdict> = None;
    for v in verdicts {
        if v.worst_disparity.is_nan() {
            continue;
        }
        if best.is_none_or(|b| better(mode, v.worst_disparity, b.worst_disparity)) {
            best = Some(*v);
        }
    }
    best.or_else(|| verdicts.first().copied())
}

fn scan(engine: &Engine, candidates: &[f64], mode: SearchMode) -> Scan {
    match mode {
        SearchMode::FirstSatisfying => {
            let opt = candidates
                .par_iter()
                .position_first(|&l| engine.evaluate_lambda(l).satisfied);
            let best = if opt.is_none() {
                let all: Vec<CandidateVerdict> =
                    candidates.par_iter().map(|&l| verdict(l, &engine.evaluate_lambda(l))).collect();
                best_of(engine.spec.mode, &all)
            } else {
                None
            };
            Scan { opt, satisfying_count: None, verdicts: Vec::new(), best }
        }
        SearchMode::Exhaustive => {
            let verdicts: Vec<CandidateVerdict> =
                candidates.par_iter().map(|&l| verdict(l, &engine.evaluate_lambda(l))).collect();
            let opt = verdicts.iter().position(|v| v.satisfied);
            let count = verdicts.iter().filter(|v| v.satisfied).count();
            let best = if opt.is_none() { best_of(engine.spec.mode, &verdicts) } else { None };
            Scan { opt, satisfying_count: Some(count), verdicts, best }
        }
    }
}

/// Smallest candidate whose slices pass `spec`.
pub fn find_lambda_opt(
    table: &ScoreTable,
    dataset: &Dataset,
    spec: &FairnessSpec,
    user_grid: Option<&[f64]>,
    mode: SearchMode,
) -> Result<ThresholdResult> {
    let space = build_lambda_space(table, dataset, spec, user_grid)?;
    let engine = Engine::new(table, dataset, spec)?;
    let s = scan(&engine, &space.candidates, mode);
    let lambda = s.opt.map(|i| space.candidates[i]);
    let at = lambda.or(s.best.map(|b| b.lambda)).unwrap_or(space.q_hat);
    if lambda.is_none() {
        log::warn!("no candidate threshold satisfies {} at c = {}", spec.metric, spec.closeness);
    }
    Ok(ThresholdResult {
        lambda_opt: lambda.map(Thresholds::Global),
        q_hat: space.q_hat,
        alpha: spec.alpha,
        guaranteed_marginal_coverage: 1.0 - spec.alpha,
        origin: space.origin,
        num_candidates: space.candidates.len(),
        satisfying_count: s.satisfying_count,
        report: engine.evaluate_lambda(at),
        best_candidate: s.best,
        verdicts: s.verdicts,
        classes: Vec::new(),
    })
}

/// One threshold per label: each `ỹ ∈ 𝒴⁺` is searched with `𝒴⁺ = {ỹ}` over
/// the global candidate set; the other labels get `q̂`.
pub fn find_classwise_lambdas(
    table: &ScoreTable,
    dataset: &Dataset,
    spec: &FairnessSpec,
    user_grid: Option<&[f64]>,
    mode: SearchMode,
) -> Result<ThresholdResult> {
    let space = build_lambda_space(table, dataset, spec, user_grid)?;
    let k = dataset.num_classes();
    let mut lambdas = vec![space.q_hat; k];
    let mut classes = Vec::new();
    let mut all_ok = true;
    for &y in spec.labels.positive() {
        let sub = spec.with_positive(vec![y])?;
        let engine = Engine::new(table, dataset, &sub)?;
        let s = scan(&engine, &space.candidates, mode);
        let lambda = s.opt.map(|i| space.candidates[i]);
        match lambda {
            Some(l) => lambdas[y] = l,
            None => {
                all_ok = false;
                if let Some(b) = s.best {
                    lambdas[y] = b.lambda;
                }
                log::warn!("no candidate threshold satisfies label {y}");
            }
        }
        classes.push(ClassOutcome { label: y, lambda, satisfying_count: s.satisfying_count, best_candidate: s.best });
    }
    let thresholds = Thresholds::Classwise(lambdas);
    let engine = Engine::new(table, dataset, spec)?;
    let report = engine.evaluate(&thresholds);
    Ok(ThresholdResult {
        lambda_opt: all_ok.then_some(thresholds),
        q_hat: space.q_hat,
        alpha: spec.alpha,
        guaranteed_marginal_coverage: 1.0 - spec.alpha,
        origin: space.origin,
        num_candidates: space.candidates.len(),
        satisfying_count: None,
        report,
        best_candidate: None,
        verdicts: Vec::new(),
        classes,
    })
}

/// Global or classwise search according to `spec.classwise`.
pub fn search(
    table: &ScoreTable,
    dataset: &Dataset,
    spec: &FairnessSpec,
    user_grid: Option<&[f64]>,
    mode: SearchMode,
) -> Result<ThresholdResult> {
    if spec.classwise {
        find_classwise_lambdas(table, dataset, spec, user_grid, mode)
    } else {
        find_lambda_opt(table, dataset, spec, user_grid, mode)
    }
}

/// `min(Λ_EO ∩ Λ_PE)` from two separate exhaustive searches.
pub fn equalized_odds_cross_check(
    table: &ScoreTable,
    dataset: &Dataset,
    spec: &FairnessSpec,
    user_grid: Option<&[f64]>,
) -> Result<Option<f64>> {
    let eo = find_lambda_opt(table, dataset, &spec.with_metric(Metric::EqualOpportunity), user_grid, SearchMode::Exhaustive)?;
    let pe = find_lambda_opt(table, dataset, &spec.with_metric(Metric::PredictiveEquality), user_grid, SearchMode::Exhaustive)?;
    Ok(eo
        .verdicts
        .iter()
        .zip(&pe.verdicts)
        .find(|(a, b)| a.satisfied && b.satisfied)
        .map(|(a, _)| a.lambda))
}
