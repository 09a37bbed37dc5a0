//! Seeded synthetic datasets with per-group miscalibration, and a naive
//! exhaustive threshold scan used to cross-check the search engine.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    stratified_split, Dataset, DegeneratePolicy, FairnessSpec, GraphStructure, GroupAssignment, Item, Metric, Mode,
    ProbabilityMatrix, RatioForm, SliceCondition, Split,
};
use crate::error::{Error, Result};
use crate::scores::ScoreTable;
use crate::seed::{self, Stream};

/// One value of a sensitive attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    /// Relative frequency.
    #[serde(default = "one")]
    pub weight: f64,
    /// Added to the true-class logit; negative values make the model less
    /// confident on this group.
    #[serde(default)]
    pub bias: f64,
    /// Label distribution for members (first attribute only); uniform if absent.
    #[serde(default)]
    pub label_prior: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub values: Vec<GroupSpec>,
}

/// Stochastic block model over the full group of each item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub p_in: f64,
    pub p_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub num_classes: usize,
    pub attributes: Vec<AttributeSpec>,
    /// True-class logit boost shared by every item.
    pub signal: f64,
    /// Standard deviation of the Gaussian logit noise.
    pub noise: f64,
    pub temperature: f64,
    /// Items left without a label (and without a split tag).
    pub unlabeled_fraction: f64,
    pub graph: Option<GraphSpec>,
    pub splits: [f64; 4],
    /// Taken from the run seed, not from the config section.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            num_classes: 4,
            attributes: vec![AttributeSpec {
                name: "group".into(),
                values: vec![
                    GroupSpec { name: "g0".into(), weight: 1.0, bias: 0.0, label_prior: None },
                    GroupSpec { name: "g1".into(), weight: 1.0, bias: -1.5, label_prior: None },
                ],
            }],
            signal: 2.5,
            noise: 1.0,
            temperature: 1.0,
            unlabeled_fraction: 0.0,
            graph: None,
            splits: [0.3, 0.2, 0.25, 0.25],
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("synth: n must be positive".into());
        }
        if self.num_classes < 2 {
            return bad("synth: need at least 2 classes".into());
        }
        if self.attributes.is_empty() {
            return bad("synth: need at least one attribute".into());
        }
        for a in &self.attributes {
            if a.values.is_empty() {
                return bad(format!("synth: attribute '{}' has no values", a.name));
            }
            for v in &a.values {
                if !(v.weight > 0.0 && v.weight.is_finite()) {
                    return bad(format!("synth: group '{}' needs a positive weight", v.name));
                }
                if let Some(p) = &v.label_prior {
                    if p.len() != self.num_classes || p.iter().any(|x| !(*x >= 0.0)) || p.iter().sum::<f64>() <= 0.0 {
                        return bad(format!("synth: bad label_prior for group '{}'", v.name));
                    }
                }
            }
        }
        if !(self.temperature > 0.0) || !(self.noise >= 0.0) {
            return bad("synth: temperature must be positive and noise nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.unlabeled_fraction) {
            return bad("synth: unlabeled_fraction must lie in [0, 1)".into());
        }
        if let Some(g) = self.graph {
            if !(0.0..=1.0).contains(&g.p_in) || !(0.0..=1.0).contains(&g.p_out) {
                return bad("synth: edge probabilities must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

fn softmax(z: &mut [f64], temperature: f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = seed::rng(config.seed, Stream::Synth);
    let k = config.num_classes;
    let pickers: Vec<WeightedIndex<f64>> = config
        .attributes
        .iter()
        .map(|a| WeightedIndex::new(a.values.iter().map(|v| v.weight)).expect("validated weights"))
        .collect();
    let uniform = WeightedIndex::new(vec![1.0; k]).expect("k > 0");
    let priors: Vec<WeightedIndex<f64>> = config.attributes[0]
        .values
        .iter()
        .map(|v| match &v.label_prior {
            Some(p) => WeightedIndex::new(p.iter().copied()).expect("validated prior"),
            None => uniform.clone(),
        })
        .collect();

    let mut raw = Vec::with_capacity(config.n);
    let mut value_idx = Vec::with_capacity(config.n);
    let mut rows = Vec::with_capacity(config.n);
    let mut items = Vec::with_capacity(config.n);
    let width = config.n.to_string().len();
    for i in 0..config.n {
        let picks: Vec<usize> = pickers.iter().map(|p| p.sample(&mut rng)).collect();
        let bias: f64 = picks.iter().zip(&config.attributes).map(|(&v, a)| a.values[v].bias).sum();
        let y = priors[picks[0]].sample(&mut rng);
        let mut z: Vec<f64> = (0..k)
            .map(|_| config.noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        z[y] += config.signal + bias;
        softmax(&mut z, config.temperature);
        let labeled = config.unlabeled_fraction == 0.0 || rng.random::<f64>() >= config.unlabeled_fraction;
        raw.push(
            picks
                .iter()
                .zip(&config.attributes)
                .map(|(&v, a)| a.values[v].name.clone())
                .collect::<Vec<_>>(),
        );
        value_idx.push(picks);
        rows.push(z);
        items.push(Item { id: format!("n{i:0width$}"), label: labeled.then_some(y), split: None });
    }
    for (a, attr) in config.attributes.iter().enumerate() {
        for (v, spec) in attr.values.iter().enumerate() {
            if !value_idx.iter().any(|p| p[a] == v) {
                return Err(Error::EmptyGroup(format!("{}={}", attr.name, spec.name)));
            }
        }
    }
    let names = config.attributes.iter().map(|a| a.name.clone()).collect();
    let groups = GroupAssignment::from_values(names, &raw)?;
    let mut ds = Dataset::new(items, groups, ProbabilityMatrix::from_rows(&rows)?)?;
    if let Some(g) = config.graph {
        let graph = sbm(&ds, g, config.seed)?;
        ds = ds.with_graph(graph)?;
    }
    stratified_split(ds, config.splits, config.seed)
}

fn sbm(ds: &Dataset, spec: GraphSpec, seed_value: u64) -> Result<GraphStructure> {
    let mut rng = seed::rng(seed_value, Stream::Graph);
    let n = ds.len();
    let groups = ds.groups();
    let mut edges = Vec::new();
    for u in 0..n {
        let gu = groups.group_of(u);
        for v in (u + 1)..n {
            let p = if groups.group_of(v) == gu { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    GraphStructure::from_edges(n, &edges)
}

/// Verdict of the naive scan at one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub lambda: f64,
    pub satisfied: bool,
    pub worst_disparity: f64,
    /// Coverage lower bounds `count/(m+1)` of every slice, label-major, then
    /// condition, then group.
    pub coverages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub q_hat: f64,
    pub lambda_opt: Option<f64>,
    pub verdicts: Vec<OracleVerdict>,
}

struct Counts {
    group: usize,
    m: usize,
    covered: usize,
    with_label: usize,
    covered_with_label: usize,
}

impl Counts {
    fn lower(&self) -> f64 {
        self.covered as f64 / (self.m + 1) as f64
    }
    fn upper(&self) -> f64 {
        (self.covered + 1) as f64 / (self.m + 1) as f64
    }
    fn width(&self) -> f64 {
        1.0 / (self.m + 1) as f64
    }
}

fn keep(cond: SliceCondition, y: usize, label: usize) -> bool {
    match cond {
        SliceCondition::InGroup => true,
        SliceCondition::InGroupWithLabel => y == label,
        SliceCondition::InGroupWithoutLabel => y != label,
    }
}

/// Returns `(value, satisfied)` for one component from plain counts.
fn oracle_coverage(spec: &FairnessSpec, cells: &[Counts]) -> (f64, bool) {
    if cells.is_empty() {
        return if spec.mode == Mode::Ratio { (1.0, true) } else { (0.0, true) };
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in cells {
        let v = c.lower() - c.width();
        if v < lo {
            lo = v;
        }
        if c.lower() > hi {
            hi = c.lower();
        }
    }
    if spec.mode == Mode::Difference {
        let gap = hi - lo;
        return (gap, gap <= spec.closeness);
    }
    let r = match spec.ratio_form {
        RatioForm::Miscoverage => {
            if 1.0 - lo == 0.0 {
                if 1.0 - hi == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                (1.0 - hi) / (1.0 - lo)
            }
        }
        RatioForm::Coverage => {
            if hi <= 0.0 {
                1.0
            } else if lo > 0.0 {
                lo / hi
            } else {
                0.0 / hi
            }
        }
    };
    (r, r >= spec.closeness)
}

fn oracle_spread(spec: &FairnessSpec, bounds: &[(f64, f64)], missing: bool) -> (f64, bool) {
    if bounds.is_empty() {
        return (0.0, !missing);
    }
    let lo = bounds.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
    let hi = bounds.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    let v = hi - lo;
    (v, !missing && v <= spec.closeness)
}

/// Every candidate in `[q̂, max]` recomputed from scratch by looping over all
/// items, with no code shared with the search engine.
pub fn oracle_scan(table: &ScoreTable, dataset: &Dataset, spec: &FairnessSpec) -> Result<OracleResult> {
    let mut calib = Vec::new();
    for (i, it) in dataset.items().iter().enumerate() {
        if it.split == Some(Split::Calib) && it.label.is_some() {
            calib.push(i);
        }
    }
    if calib.is_empty() {
        return Err(Error::EmptyCalibrator);
    }
    let mut s: Vec<f64> = calib.iter().map(|&i| table.row(i)[dataset.item(i).label.unwrap()]).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    let k = (((n + 1) as f64) * (1.0 - spec.alpha) - 1e-9).ceil() as usize;
    if k > n {
        return Err(Error::InsufficientCalibration {
            required: ((1.0 / spec.alpha).ceil() as usize).saturating_sub(1),
            available: n,
            alpha: spec.alpha,
        });
    }
    let q_hat = s[k.max(1) - 1];
    let top = s[n - 1];
    let mut cands = vec![q_hat, top];
    for &i in &calib {
        for &y in spec.labels.positive() {
            let v = table.row(i)[y];
            if q_hat <= v && v <= top {
                cands.push(v);
            }
        }
    }
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();

    let ng = dataset.groups().num_groups();
    // Degenerate slices do not depend on λ: detect them once.
    let mut empty = Vec::new();
    for &label in spec.labels.positive() {
        for &cond in spec.metric.conditions() {
            for g in 0..ng {
                let any = calib
                    .iter()
                    .any(|&i| dataset.groups().group_of(i) == g && keep(cond, dataset.item(i).label.unwrap(), label));
                if !any {
                    if spec.degenerate == DegeneratePolicy::Error {
                        return Err(Error::DegenerateSlice {
                            group: dataset.groups().group_name(g),
                            label,
                            condition: cond.to_string(),
                        });
                    }
                    empty.push((label, cond, g));
                }
            }
        }
    }

    let mut verdicts = Vec::with_capacity(cands.len());
    for &lambda in &cands {
        let mut coverages = Vec::new();
        let mut values = Vec::new();
        let mut all_ok = true;
        for &label in spec.labels.positive() {
            let mut by_cond: Vec<Vec<Counts>> = Vec::new();
            for &cond in spec.metric.conditions() {
                let mut cells = Vec::new();
                for g in 0..ng {
                    if empty.contains(&(label, cond, g)) {
                        continue;
                    }
                    let mut c = Counts { group: g, m: 0, covered: 0, with_label: 0, covered_with_label: 0 };
                    for &i in &calib {
                        let y = dataset.item(i).label.unwrap();
                        if dataset.groups().group_of(i) != g || !keep(cond, y, label) {
                            continue;
                        }
                        let inside = table.row(i)[label] <= lambda;
                        c.m += 1;
                        if inside {
                            c.covered += 1;
                        }
                        if y == label {
                            c.with_label += 1;
                            if inside {
                                c.covered_with_label += 1;
                            }
                        }
                    }
                    coverages.push(c.lower());
                    cells.push(c);
                }
                by_cond.push(cells);
            }
            let outcomes: Vec<(f64, bool)> = match spec.metric {
                Metric::EqualizedOdds => by_cond.iter().map(|cells| oracle_coverage(spec, cells)).collect(),
                Metric::PredictiveParityProxy => {
                    let mut b = Vec::new();
                    let mut missing = false;
                    for c in &by_cond[0] {
                        if c.covered == 0 {
                            missing = true;
                        } else {
                            let p = c.covered_with_label as f64 / c.covered as f64 - c.with_label as f64 / c.m as f64;
                            b.push((p, p));
                        }
                    }
                    vec![oracle_spread(spec, &b, missing)]
                }
                Metric::PredictiveParity => {
                    let (eo, dp) = (&by_cond[0], &by_cond[1]);
                    let mut b = Vec::new();
                    let mut missing = false;
                    for d in dp {
                        match eo.iter().find(|e| e.group == d.group) {
                            None => missing = true,
                            Some(e) => {
                                let prior = d.with_label as f64 / d.m as f64;
                                let lo = e.lower() / d.upper() * prior;
                                let hi = if d.lower() == 0.0 { 1.0 } else { (e.upper() / d.lower() * prior).min(1.0) };
                                b.push((lo, hi));
                            }
                        }
                    }
                    vec![oracle_spread(spec, &b, missing)]
                }
                _ => vec![oracle_coverage(spec, &by_cond[0])],
            };
            for (v, ok) in outcomes {
                values.push(v);
                all_ok &= ok;
            }
        }
        let worst = if spec.mode == Mode::Difference {
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            values.iter().copied().fold(f64::INFINITY, f64::min)
        };
        verdicts.push(OracleVerdict { lambda, satisfied: all_ok, worst_disparity: worst, coverages });
    }
    let lambda_opt = verdicts.iter().find(|v| v.satisfied).map(|v| v.lambda);
    Ok(OracleResult { q_hat, lambda_opt, verdicts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{save_dataset, Format, LabelSet};
    use crate::scores::score_tps;

    #[test]
    fn deterministic_bytes() {
        let cfg = SynthConfig { n: 300, seed: 9, ..SynthConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        save_dataset(&generate(&cfg).unwrap(), &a, Format::Csv).unwrap();
        save_dataset(&generate(&cfg).unwrap(), &b, Format::Csv).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let other = SynthConfig { seed: 10, ..cfg };
        assert_ne!(generate(&other).unwrap(), generate(&SynthConfig { n: 300, seed: 9, ..SynthConfig::default() }).unwrap());
    }

    #[test]
    fn rows_are_stochastic_and_split() {
        let ds = generate(&SynthConfig { n: 500, ..SynthConfig::default() }).unwrap();
        for r in ds.probs().rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(ds.is_fully_split());
        assert_eq!(ds.split_indices(Split::Calib).len(), 125);
    }

    #[test]
    fn sharp_unbiased_model_is_accurate() {
        let cfg = SynthConfig {
            n: 400,
            signal: 5.0,
            noise: 0.2,
            temperature: 0.05,
            attributes: vec![AttributeSpec {
                name: "g".into(),
                values: vec![
                    GroupSpec { name: "a".into(), weight: 1.0, bias: 0.0, label_prior: None },
                    GroupSpec { name: "b".into(), weight: 1.0, bias: 0.0, label_prior: None },
                ],
            }],
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let correct = (0..ds.len())
            .filter(|&i| {
                let r = ds.probs().row(i);
                let arg = (0..r.len()).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
                Some(arg) == ds.label(i)
            })
            .count();
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn negative_bias_lowers_coverage() {
        let ds = generate(&SynthConfig { n: 8000, seed: 1, ..SynthConfig::default() }).unwrap();
        let t = score_tps(ds.probs());
        let cal = crate::search::calibrator(&t, &ds, 0.1).unwrap();
        let q = cal.conformal_quantile().unwrap();
        let mut cov = [0.0f64; 2];
        let mut n = [0.0f64; 2];
        for i in ds.split_indices(Split::Test) {
            let g = ds.groups().group_of(i);
            n[g] += 1.0;
            if t.get(i, ds.label(i).unwrap()) <= q {
                cov[g] += 1.0;
            }
        }
        assert!(cov[1] / n[1] < cov[0] / n[0]);
    }

    #[test]
    fn empty_group_is_an_error() {
        let mut cfg = SynthConfig { n: 5, ..SynthConfig::default() };
        cfg.attributes[0].values[1].weight = 1e-12;
        assert!(matches!(generate(&cfg), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn graph_is_homophilous() {
        let cfg = SynthConfig { n: 300, graph: Some(GraphSpec { p_in: 0.05, p_out: 0.005 }), ..SynthConfig::default() };
        let ds = generate(&cfg).unwrap();
        let g = ds.graph().unwrap();
        let same = g.edges().iter().filter(|(u, v)| ds.groups().group_of(*u) == ds.groups().group_of(*v)).count();
        assert!(same * 2 > g.num_edges());
    }

    #[test]
    fn oracle_loose_closeness_returns_min() {
        let ds = generate(&SynthConfig { n: 400, ..SynthConfig::default() }).unwrap();
        let t = score_tps(ds.probs());
        let spec = FairnessSpec::new(Metric::DemographicParity, 1.0, 0.1, LabelSet::all(4).unwrap()).unwrap();
        let r = oracle_scan(&t, &ds, &spec).unwrap();
        assert_eq!(r.lambda_opt, Some(r.q_hat));
    }
}
