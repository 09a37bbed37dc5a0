//! Domain types shared by every other module: items, labels, sensitive
//! groups, class-probability matrices and the dataset container.

mod criterion;
mod graph;
pub mod io;
mod split;

pub use criterion::{DegeneratePolicy, FairnessSpec, Metric, Mode, RatioForm, SliceCondition};
pub use graph::GraphStructure;
pub use io::{load_dataset, load_dataset_with_probs, save_dataset, Format};
pub use split::stratified_split;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of a probability matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Calib,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Valid, Split::Calib, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Calib => "calib",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "valid" | "val" | "validation" => Some(Split::Valid),
            "calib" | "calibration" => Some(Split::Calib),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The label universe and the advantaged ("positive") labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    num_classes: usize,
    positive: Vec<usize>,
}

impl LabelSet {
    pub fn new(num_classes: usize, positive: Vec<usize>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Validation("number of classes must be positive".into()));
        }
        if positive.is_empty() {
            return Err(Error::Validation("positive label set is empty".into()));
        }
        let mut seen = HashSet::new();
        for &y in &positive {
            if y >= num_classes {
                return Err(Error::Validation(format!(
                    "positive label {y} out of range for {num_classes} classes"
                )));
            }
            if !seen.insert(y) {
                return Err(Error::Validation(format!("duplicate positive label {y}")));
            }
        }
        Ok(Self {
            num_classes,
            positive,
        })
    }

    /// Every label is positive.
    pub fn all(num_classes: usize) -> Result<Self> {
        Self::new(num_classes, (0..num_classes).collect())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn positive(&self) -> &[usize] {
        &self.positive
    }

    pub fn is_positive(&self, label: usize) -> bool {
        self.positive.contains(&label)
    }
}

/// How the group universe is formed from the sensitive attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupMode {
    /// Groups are the values of one attribute.
    Single(usize),
    /// Every combination of attribute values is its own group.
    Intersectional,
}

/// Per-item membership in sensitive groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    attribute_names: Vec<String>,
    attribute_values: Vec<Vec<String>>,
    item_groups: Vec<Vec<usize>>,
    mode: GroupMode,
}

impl GroupAssignment {
    /// Build from raw string values, `raw[i][a]` being item `i`'s value for
    /// attribute `a`. Value ids follow sorted value order.
    pub fn from_values(attribute_names: Vec<String>, raw: &[Vec<String>]) -> Result<Self> {
        let n_attr = attribute_names.len();
        if n_attr == 0 {
            return Err(Error::Validation("at least one sensitive attribute required".into()));
        }
        let mut attribute_values: Vec<Vec<String>> = vec![Vec::new(); n_attr];
        for (i, row) in raw.iter().enumerate() {
            if row.len() != n_attr {
                return Err(Error::Validation(format!(
                    "item {i} has {} group values, expected {n_attr}",
                    row.len()
                )));
            }
            for (a, v) in row.iter().enumerate() {
                attribute_values[a].push(v.clone());
            }
        }
        for values in &mut attribute_values {
            values.sort();
            values.dedup();
        }
        let item_groups = raw
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(a, v)| attribute_values[a].binary_search(v).expect("value indexed"))
                    .collect()
            })
            .collect();
        Ok(Self {
            attribute_names,
            attribute_values,
            item_groups,
            mode: GroupMode::Single(0),
        })
    }

    pub fn with_mode(mut self, mode: GroupMode) -> Result<Self> {
        if let GroupMode::Single(a) = mode {
            if a >= self.attribute_names.len() {
                return Err(Error::Validation(format!("attribute index {a} out of range")));
            }
        }
        self.mode = mode;
        Ok(self)
    }

    pub fn mode(&self) -> GroupMode {
        self.mode
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn attribute_values(&self) -> &[Vec<String>] {
        &self.attribute_values
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|a| a == name)
    }

    /// Raw per-attribute value ids of an item.
    pub fn item_values(&self, item: usize) -> &[usize] {
        &self.item_groups[item]
    }

    /// Size of the effective group universe.
    pub fn num_groups(&self) -> usize {
        match self.mode {
            GroupMode::Single(a) => self.attribute_values[a].len(),
            GroupMode::Intersectional => self.attribute_values.iter().map(Vec::len).product(),
        }
    }

    /// Effective group of an item under the current mode.
    pub fn group_of(&self, item: usize) -> usize {
        let values = &self.item_groups[item];
        match self.mode {
            GroupMode::Single(a) => values[a],
            GroupMode::Intersectional => values
                .iter()
                .zip(&self.attribute_values)
                .fold(0, |acc, (&v, vals)| acc * vals.len() + v),
        }
    }

    pub fn group_name(&self, group: usize) -> String {
        match self.mode {
            GroupMode::Single(a) => self.attribute_values[a][group].clone(),
            GroupMode::Intersectional => {
                let mut rem = group;
                let mut parts = Vec::with_capacity(self.attribute_values.len());
                for vals in self.attribute_values.iter().rev() {
                    parts.push(vals[rem % vals.len()].clone());
                    rem /= vals.len();
                }
                parts.reverse();
                parts.join("/")
            }
        }
    }

    pub fn group_names(&self) -> Vec<String> {
        (0..self.num_groups()).map(|g| self.group_name(g)).collect()
    }

    pub fn len(&self) -> usize {
        self.item_groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_groups.is_empty()
    }

    /// String value of attribute `a` for item `i`.
    pub fn value_name(&self, item: usize, attribute: usize) -> &str {
        &self.attribute_values[attribute][self.item_groups[item][attribute]]
    }
}

/// Row-stochastic n×K class-probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    num_classes: usize,
    values: Vec<f64>,
}

pub(crate) fn check_probability_row(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(format!("row sums to {sum}, expected 1"));
    }
    Ok(())
}

impl ProbabilityMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_classes = rows.first().map_or(0, Vec::len);
        if num_classes == 0 {
            return Err(Error::Validation("probability matrix has no columns".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * num_classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != num_classes {
                return Err(Error::Validation(format!(
                    "row {i} has {} entries, expected {num_classes}",
                    row.len()
                )));
            }
            check_probability_row(row).map_err(|m| Error::Validation(format!("row {i}: {m}")))?;
            values.extend_from_slice(row);
        }
        Ok(Self {
            num_classes,
            values,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.num_classes)
    }
}

/// One dataset row: identifier, optional true label, split tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub label: Option<usize>,
    pub split: Option<Split>,
}

/// Items, their group memberships and class probabilities. Immutable once
/// built; the `with_*` methods return modified copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<Item>,
    groups: GroupAssignment,
    probs: ProbabilityMatrix,
    graph: Option<GraphStructure>,
}

impl Dataset {
    pub fn new(items: Vec<Item>, groups: GroupAssignment, probs: ProbabilityMatrix) -> Result<Self> {
        if items.len() != probs.len() {
            return Err(Error::Validation(format!(
                "{} items but {} probability rows",
                items.len(),
                probs.len()
            )));
        }
        if items.len() != groups.len() {
            return Err(Error::Validation(format!(
                "{} items but {} group rows",
                items.len(),
                groups.len()
            )));
        }
        let k = probs.num_classes();
        let mut ids = HashSet::with_capacity(items.len());
        for item in &items {
            if !ids.insert(item.id.as_str()) {
                return Err(Error::Validation(format!("duplicate item id '{}'", item.id)));
            }
            if let Some(y) = item.label {
                if y >= k {
                    return Err(Error::Validation(format!(
                        "item '{}' has label {y} but only {k} classes",
                        item.id
                    )));
                }
            } else if item.split.is_some() {
                return Err(Error::Validation(format!(
                    "unlabeled item '{}' cannot carry a split tag",
                    item.id
                )));
            }
        }
        Ok(Self {
            items,
            groups,
            probs,
            graph: None,
        })
    }

    pub fn with_graph(mut self, graph: GraphStructure) -> Result<Self> {
        if graph.num_nodes() != self.items.len() {
            return Err(Error::Graph(format!(
                "graph has {} nodes but dataset has {} items",
                graph.num_nodes(),
                self.items.len()
            )));
        }
        self.graph = Some(graph);
        Ok(self)
    }

    pub fn with_group_mode(mut self, mode: GroupMode) -> Result<Self> {
        self.groups = self.groups.with_mode(mode)?;
        Ok(self)
    }

    /// Replace split tags. Unlabeled items must map to `None`.
    pub fn with_splits(mut self, splits: Vec<Option<Split>>) -> Result<Self> {
        if splits.len() != self.items.len() {
            return Err(Error::Validation("split vector length mismatch".into()));
        }
        for (item, split) in self.items.iter_mut().zip(splits) {
            if item.label.is_none() && split.is_some() {
                return Err(Error::Validation(format!(
                    "unlabeled item '{}' cannot carry a split tag",
                    item.id
                )));
            }
            item.split = split;
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.num_classes()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, i: usize) -> &Item {
        &self.items[i]
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.items[i].label
    }

    pub fn probs(&self) -> &ProbabilityMatrix {
        &self.probs
    }

    pub fn groups(&self) -> &GroupAssignment {
        &self.groups
    }

    pub fn graph(&self) -> Option<&GraphStructure> {
        self.graph.as_ref()
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.items[i].label.is_some()).collect()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.items[i].split == Some(split))
            .collect()
    }

    /// True when every labeled item carries a split tag.
    pub fn is_fully_split(&self) -> bool {
        self.items
            .iter()
            .all(|it| it.label.is_none() || it.split.is_some())
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|it| it.id == id)
    }
}

/// Indices among `items` satisfying the slice condition for `(group, label)`.
pub fn filter_items(
    dataset: &Dataset,
    items: &[usize],
    condition: SliceCondition,
    group: usize,
    label: usize,
) -> Vec<usize> {
    items
        .iter()
        .copied()
        .filter(|&i| {
            let Some(y) = dataset.label(i) else {
                return false;
            };
            dataset.groups().group_of(i) == group
                && match condition {
                    SliceCondition::InGroup => true,
                    SliceCondition::InGroupWithLabel => y == label,
                    SliceCondition::InGroupWithoutLabel => y != label,
                }
        })
        .collect()
}

/// Calibration-split items selected by the filter of `metric` for
/// `(group, label)`. Metrics that combine several filters return the
/// concatenation of their component slices in component order.
pub fn filter_calibration(dataset: &Dataset, metric: Metric, group: usize, label: usize) -> Vec<usize> {
    let calib = dataset.split_indices(Split::Calib);
    metric
        .conditions()
        .iter()
        .flat_map(|&cond| filter_items(dataset, &calib, cond, group, label))
        .collect()
}
