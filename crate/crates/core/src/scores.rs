//! Non-conformity scores computed for every (item, label) pair.
//!
//! Lower scores mean "more conforming". Point scores (TPS, APS, RAPS) use a
//! single probability row; DAPS smooths a point score over graph neighbors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GraphStructure, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Tps,
    Aps,
    Raps,
    Daps,
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tps" => Ok(ScoreKind::Tps),
            "aps" => Ok(ScoreKind::Aps),
            "raps" => Ok(ScoreKind::Raps),
            "daps" => Ok(ScoreKind::Daps),
            other => Err(Error::Config(format!("unknown score '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreParams {
    pub kind: ScoreKind,
    /// Draw `u ~ U(0,1)` per item for APS/RAPS; otherwise `u = 0`.
    pub aps_randomized: bool,
    pub seed: u64,
    pub raps_nu: f64,
    pub raps_kreg: usize,
    pub daps_delta: f64,
    /// Point score diffused by DAPS.
    pub daps_base: ScoreKind,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            kind: ScoreKind::Aps,
            aps_randomized: true,
            seed: 0,
            raps_nu: 0.01,
            raps_kreg: 2,
            daps_delta: 0.5,
            daps_base: ScoreKind::Aps,
        }
    }
}

impl ScoreParams {
    pub fn new(kind: ScoreKind) -> Self {
        Self { kind, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.raps_nu >= 0.0 && self.raps_nu.is_finite()) {
            return Err(Error::Config(format!("raps_nu={} must be >= 0", self.raps_nu)));
        }
        if !(0.0..=1.0).contains(&self.daps_delta) {
            return Err(Error::Config(format!("daps_delta={} must lie in [0, 1]", self.daps_delta)));
        }
        if self.daps_base == ScoreKind::Daps {
            return Err(Error::Config("daps_base must be a point score".into()));
        }
        Ok(())
    }
}

/// n×K table of scores, entry `(i, y) = s(x_i, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    num_classes: usize,
    values: Vec<f64>,
}

impl ScoreTable {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let num_classes = rows.first().map_or(0, Vec::len);
        if num_classes == 0 {
            return Err(Error::Validation("score table has no columns".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * num_classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != num_classes {
                return Err(Error::Validation(format!("score row {i} has wrong width")));
            }
            if row.iter().any(|s| !s.is_finite()) {
                return Err(Error::Validation(format!("score row {i} has a non-finite entry")));
            }
            values.extend_from_slice(row);
        }
        Ok(Self { num_classes, values })
    }

    fn from_flat(num_classes: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len() % num_classes, 0);
        Self { num_classes, values }
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

    #[inline]
    pub fn get(&self, item: usize, label: usize) -> f64 {
        self.values[item * self.num_classes + label]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.num_classes)
    }

    /// Largest entry in the table.
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Write as CSV with header `id,s_0,..,s_{K-1}`.
    pub fn save_csv(&self, dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if dataset.len() != self.len() {
            return Err(Error::Validation("score table and dataset sizes differ".into()));
        }
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend((0..self.num_classes).map(|c| format!("s_{c}")));
        wtr.write_record(&header)?;
        for (item, row) in dataset.items().iter().zip(self.rows()) {
            let mut rec = vec![item.id.clone()];
            rec.extend(row.iter().map(|s| s.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a CSV written by [`ScoreTable::save_csv`] (or produced by an
    /// external model), reordered to match the dataset's items.
    pub fn load_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let k = rdr.headers()?.len().saturating_sub(1);
        if k != dataset.num_classes() {
            return Err(Error::Validation(format!(
                "score file has {k} label columns, dataset has {} classes",
                dataset.num_classes()
            )));
        }
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; dataset.len()];
        let index: std::collections::HashMap<&str, usize> =
            dataset.items().iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse { row: r, message: e.to_string() })?;
            let id = rec.get(0).unwrap_or("");
            let &i = index.get(id).ok_or_else(|| Error::Validation(format!("unknown item id '{id}' in scores")))?;
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Parse { row: r, message: format!("invalid score '{v}'") })
                })
                .collect::<Result<Vec<_>>>()?;
            if rows[i].replace(row).is_some() {
                return Err(Error::Validation(format!("duplicate item id '{id}' in scores")));
            }
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| Error::Validation(format!("no scores for item '{}'", dataset.item(i).id))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }
}

/// `s(x, y) = 1 − π̂(x)_y`.
pub fn score_tps(probs: &ProbabilityMatrix) -> ScoreTable {
    let values = probs.rows().flat_map(|row| row.iter().map(|p| 1.0 - p)).collect();
    ScoreTable::from_flat(probs.num_classes(), values)
}

/// Label order by descending probability; ties by ascending label.
fn descending_order(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

fn aps_row(row: &[f64], u: f64, out: &mut [f64]) {
    let mut cum = 0.0;
    for y in descending_order(row) {
        cum += row[y];
        out[y] = cum - u * row[y];
    }
}

/// Per-item uniforms for randomized APS/RAPS, keyed on `(seed, item id)`.
pub fn item_noise(dataset: &Dataset, params: &ScoreParams) -> Vec<f64> {
    if !params.aps_randomized {
        return vec![0.0; dataset.len()];
    }
    dataset
        .items()
        .iter()
        .map(|it| seed::item_uniform(params.seed, &it.id))
        .collect()
}

/// `s(x, y) = Σ_{i ≤ r_y} π̂(x)_(i) − u·π̂(x)_y` with one `u` per item.
pub fn score_aps(probs: &ProbabilityMatrix, noise: &[f64]) -> ScoreTable {
    let k = probs.num_classes();
    let mut values = vec![0.0; probs.len() * k];
    for ((row, out), &u) in probs.rows().zip(values.chunks_exact_mut(k)).zip(noise) {
        aps_row(row, u, out);
    }
    ScoreTable::from_flat(k, values)
}

/// APS plus `ν·max(o(x, y) − k_reg, 0)` where
/// `o(x, y) = |{c : π̂(x)_y ≥ π̂(x)_c}|`.
pub fn score_raps(probs: &ProbabilityMatrix, noise: &[f64], nu: f64, kreg: usize) -> ScoreTable {
    let k = probs.num_classes();
    let mut table = score_aps(probs, noise);
    for (i, row) in probs.rows().enumerate() {
        for y in 0..k {
            let o = row.iter().filter(|&&pc| row[y] >= pc).count();
            table.values[i * k + y] += nu * o.saturating_sub(kreg) as f64;
        }
    }
    table
}

/// One diffusion step: `ŝ(x, y) = (1−δ)s(x, y) + δ·mean_{u ∈ N(x)} s(u, y)`.
/// Isolated nodes keep their point score.
pub fn score_daps(point: &ScoreTable, graph: &GraphStructure, delta: f64) -> Result<ScoreTable> {
    if graph.num_nodes() != point.len() {
        return Err(Error::Graph(format!(
            "graph has {} nodes, score table has {} rows",
            graph.num_nodes(),
            point.len()
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Config(format!("daps_delta={delta} must lie in [0, 1]")));
    }
    let k = point.num_classes();
    let mut values = Vec::with_capacity(point.values.len());
    let mut mean = vec![0.0; k];
    for i in 0..point.len() {
        let nbrs = graph.neighbors(i);
        let own = point.row(i);
        if nbrs.is_empty() {
            values.extend_from_slice(own);
            continue;
        }
        mean.iter_mut().for_each(|m| *m = 0.0);
        for &u in nbrs {
            for (m, s) in mean.iter_mut().zip(point.row(u)) {
                *m += s;
            }
        }
        let denom = nbrs.len() as f64;
        values.extend(own.iter().zip(&mean).map(|(s, m)| (1.0 - delta) * s + delta * (m / denom)));
    }
    Ok(ScoreTable::from_flat(k, values))
}

fn point_scores(dataset: &Dataset, kind: ScoreKind, params: &ScoreParams) -> ScoreTable {
    match kind {
        ScoreKind::Tps => score_tps(dataset.probs()),
        ScoreKind::Aps => score_aps(dataset.probs(), &item_noise(dataset, params)),
        ScoreKind::Raps => score_raps(
            dataset.probs(),
            &item_noise(dataset, params),
            params.raps_nu,
            params.raps_kreg,
        ),
        ScoreKind::Daps => unreachable!("validated"),
    }
}

/// Score every item of the dataset for every label.
pub fn compute_scores(dataset: &Dataset, params: &ScoreParams) -> Result<ScoreTable> {
    params.validate()?;
    match params.kind {
        ScoreKind::Daps => {
            let graph = dataset
                .graph()
                .ok_or_else(|| Error::Config("DAPS requires a graph".into()))?;
            let base = point_scores(dataset, params.daps_base, params);
            score_daps(&base, graph, params.daps_delta)
        }
        kind => Ok(point_scores(dataset, kind, params)),
    }
}
