//! Machine-readable run reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::AuditVerdict;
use crate::config::Config;
use crate::conformal::Thresholds;
use crate::data::{Dataset, FairnessSpec, Metric, Split};
use crate::error::{Error, Result};
use crate::gcp::{GcpEvaluation, GcpThreshold};
use crate::metrics::{efficiency, evaluate_sets, marginal_coverage, DisparityReport, Estimate, GroupLabelSlice, SetMembership};
use crate::search::ThresholdResult;

/// Point-estimate behavior of one family of prediction sets on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEvaluation {
    pub split: Split,
    pub items: usize,
    pub marginal_coverage: f64,
    /// Mean prediction-set size.
    pub efficiency: f64,
    pub worst_disparity: f64,
    pub satisfied: bool,
    pub disparate_impact_ratio: f64,
    pub report: DisparityReport,
}

impl SetEvaluation {
    pub fn compute(dataset: &Dataset, spec: &FairnessSpec, split: Split, sets: &dyn SetMembership) -> Result<Self> {
        let items = dataset.split_indices(split);
        let report = evaluate_sets(dataset, spec, &items, sets, Estimate::Empirical)?;
        let di = if spec.metric == Metric::DisparateImpact {
            report.worst_disparity
        } else {
            evaluate_sets(dataset, &spec.with_metric(Metric::DisparateImpact), &items, sets, Estimate::Empirical)?
                .worst_disparity
        };
        Ok(Self {
            split,
            items: items.len(),
            marginal_coverage: marginal_coverage(dataset, &items, sets),
            efficiency: efficiency(dataset, &items, sets),
            worst_disparity: report.worst_disparity,
            satisfied: report.satisfied,
            disparate_impact_ratio: di,
            report,
        })
    }
}

/// One row of the per-(group, label) table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRow {
    pub group: String,
    pub label: usize,
    pub condition: String,
    pub calib_size: usize,
    pub calib_covered: usize,
    pub calib_coverage_lower: f64,
    pub calib_coverage_upper: f64,
    pub test_size: Option<usize>,
    pub test_coverage: Option<f64>,
}

pub fn slice_table(calib: &[GroupLabelSlice], test: &[GroupLabelSlice]) -> Vec<SliceRow> {
    calib
        .iter()
        .map(|c| {
            let t = test.iter().find(|t| t.key == c.key);
            SliceRow {
                group: c.group_name.clone(),
                label: c.key.label,
                condition: c.key.condition.to_string(),
                calib_size: c.size,
                calib_covered: c.covered,
                calib_coverage_lower: c.coverage.lower,
                calib_coverage_upper: c.coverage.upper,
                test_size: t.map(|t| t.size),
                test_coverage: t.map(|t| t.covered as f64 / t.size as f64),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub lambda: f64,
    /// Calibration-split check at `q̂`.
    pub calibration: DisparityReport,
    pub test: SetEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: Config,
    pub spec: FairnessSpec,
    pub result: ThresholdResult,
    pub test: SetEvaluation,
    pub baseline: Baseline,
    pub table: Vec<SliceRow>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub command: String,
    pub config: Config,
    pub verdict: AuditVerdict,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub command: String,
    pub config: Config,
    pub spec: FairnessSpec,
    /// `None` when explicit sets were evaluated.
    pub thresholds: Option<Thresholds>,
    pub test: SetEvaluation,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcpSide {
    pub model: GcpThreshold,
    pub test: GcpEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub command: String,
    pub config: Config,
    pub spec: FairnessSpec,
    pub cf: RunReport,
    pub gcp: GcpSide,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::Config(format!("unknown format '{other}' (json or csv)"))),
        }
    }
}

/// Write to `path`, or stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).map_err(|e| Error::io("<stdout>", e))?;
            out.flush().map_err(|e| Error::io("<stdout>", e))
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Rows of `T` as CSV with a header.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Validation(e.to_string()))
}

/// Flat per-(group, label) rows of a disparity report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCsvRow {
    pub group: String,
    pub label: usize,
    pub condition: String,
    pub size: usize,
    pub covered: usize,
    pub with_label: usize,
    pub covered_with_label: usize,
    pub coverage_lower: f64,
    pub coverage_upper: f64,
}

pub fn slice_rows(report: &DisparityReport) -> Vec<SliceCsvRow> {
    report
        .slices
        .iter()
        .map(|s| SliceCsvRow {
            group: s.group_name.clone(),
            label: s.key.label,
            condition: s.key.condition.to_string(),
            size: s.size,
            covered: s.covered,
            with_label: s.with_label,
            covered_with_label: s.covered_with_label,
            coverage_lower: s.coverage.lower,
            coverage_upper: s.coverage.upper,
        })
        .collect()
}

/// One line per method for side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub marginal_coverage: f64,
    pub efficiency: f64,
    pub worst_disparity: f64,
    pub demographic_parity_disparity: f64,
    pub disparate_impact_ratio: f64,
}
