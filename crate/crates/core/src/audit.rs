//! Check a deployed threshold, or prediction sets from an opaque predictor,
//! against a fairness spec on a held-out audit set.
//!
//! The audit set plays the role of the calibration split: items tagged
//! `calib` are audited, or every labeled item when the dataset carries no
//! split tags. Explicit sets are counted the same way as threshold sets, so
//! slice coverage is `count/(m+1)` with width `1/(m+1)` on both paths.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::Thresholds;
use crate::data::{Dataset, FairnessSpec, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_sets, DisparityReport, Estimate, SetMembership, ThresholdSets};
use crate::scores::ScoreTable;

/// Per-item prediction sets, stored as membership flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitSets {
    num_classes: usize,
    flags: Vec<bool>,
}

impl ExplicitSets {
    /// `sets[i]` lists the labels predicted for item `i`.
    pub fn new(num_classes: usize, sets: &[Vec<usize>]) -> Result<Self> {
        let mut flags = vec![false; sets.len() * num_classes];
        for (i, set) in sets.iter().enumerate() {
            for &y in set {
                if y >= num_classes {
                    return Err(Error::Validation(format!(
                        "prediction set of item {i} contains label {y}, but there are {num_classes} classes"
                    )));
                }
                flags[i * num_classes + y] = true;
            }
        }
        Ok(Self { num_classes, flags })
    }

    /// Sets produced by thresholding `table`.
    pub fn from_thresholds(table: &ScoreTable, thresholds: &Thresholds) -> Self {
        let sets: Vec<Vec<usize>> = table.rows().map(|r| thresholds.set(r)).collect();
        Self::new(table.num_classes(), &sets).expect("labels come from the table")
    }

    pub fn len(&self) -> usize {
        self.flags.len() / self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn set(&self, item: usize) -> Vec<usize> {
        (0..self.num_classes).filter(|&y| self.contains(item, y)).collect()
    }

    /// CSV with header `item_id,labels`; labels are `;`-joined, empty for ∅.
    /// Every dataset item must appear exactly once.
    pub fn load_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(file);
        let index: HashMap<&str, usize> =
            dataset.items().iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
        let mut sets: Vec<Option<Vec<usize>>> = vec![None; dataset.len()];
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = row + 1;
            let id = rec.get(0).ok_or_else(|| Error::Parse { row, message: "missing item_id".into() })?;
            let idx = *index
                .get(id)
                .ok_or_else(|| Error::Validation(format!("row {row}: unknown item '{id}'")))?;
            if sets[idx].is_some() {
                return Err(Error::Validation(format!("row {row}: item '{id}' listed twice")));
            }
            let field = rec.get(1).unwrap_or("");
            let mut labels = Vec::new();
            let mut seen = HashSet::new();
            for tok in field.split(';').map(str::trim).filter(|t| !t.is_empty()) {
                let y: usize = tok
                    .parse()
                    .map_err(|_| Error::Parse { row, message: format!("bad label '{tok}'") })?;
                if y >= dataset.num_classes() {
                    return Err(Error::Validation(format!(
                        "row {row}: label {y} out of range for item '{id}'"
                    )));
                }
                if seen.insert(y) {
                    labels.push(y);
                }
            }
            sets[idx] = Some(labels);
        }
        let missing: Vec<&str> = sets
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| dataset.item(i).id.as_str())
            .take(5)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!("no prediction set for items {missing:?}")));
        }
        let sets: Vec<Vec<usize>> = sets.into_iter().map(Option::unwrap).collect();
        Self::new(dataset.num_classes(), &sets)
    }

    pub fn save_csv(&self, dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["item_id", "labels"])?;
        for i in 0..self.len() {
            let labels: Vec<String> = self.set(i).iter().map(usize::to_string).collect();
            w.write_record([dataset.item(i).id.as_str(), &labels.join(";")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl SetMembership for ExplicitSets {
    #[inline]
    fn contains(&self, item: usize, label: usize) -> bool {
        self.flags[item * self.num_classes + label]
    }
}

/// What is being audited.
pub enum AuditInput<'a> {
    Threshold { table: &'a ScoreTable, thresholds: Thresholds },
    Sets(&'a ExplicitSets),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditSource {
    Threshold,
    Sets,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub spec: FairnessSpec,
    pub source: AuditSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
    pub audited_items: usize,
    pub pass: bool,
    /// Per-slice counts live in `report.slices`.
    pub report: DisparityReport,
}

/// Items that form the audit set.
pub fn audit_items(dataset: &Dataset) -> Vec<usize> {
    if dataset.items().iter().any(|it| it.split.is_some()) {
        dataset.split_indices(Split::Calib)
    } else {
        dataset.labeled_indices()
    }
}

pub fn audit_lambda(dataset: &Dataset, input: &AuditInput, spec: &FairnessSpec) -> Result<AuditVerdict> {
    let items = audit_items(dataset);
    if items.is_empty() {
        return Err(Error::Validation("audit set is empty".into()));
    }
    let (report, source, thresholds) = match input {
        AuditInput::Threshold { table, thresholds } => {
            if table.len() != dataset.len() {
                return Err(Error::Validation(format!(
                    "score table has {} rows, dataset has {} items",
                    table.len(),
                    dataset.len()
                )));
            }
            let sets = ThresholdSets { table, thresholds };
            let r = evaluate_sets(dataset, spec, &items, &sets, Estimate::Conservative)?;
            (r, AuditSource::Threshold, Some(thresholds.clone()))
        }
        AuditInput::Sets(sets) => {
            if sets.len() != dataset.len() {
                return Err(Error::Validation(format!(
                    "{} prediction sets for {} items",
                    sets.len(),
                    dataset.len()
                )));
            }
            let r = evaluate_sets(dataset, spec, &items, *sets, Estimate::Conservative)?;
            (r, AuditSource::Sets, None)
        }
    };
    Ok(AuditVerdict {
        spec: spec.clone(),
        source,
        thresholds,
        audited_items: items.len(),
        pass: report.satisfied,
        report,
    })
}
