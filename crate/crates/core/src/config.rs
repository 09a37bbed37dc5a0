//! Run configuration, read from TOML or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DegeneratePolicy, FairnessSpec, GroupMode, LabelSet, Metric, RatioForm};
use crate::error::{Error, Result};
use crate::scores::{ScoreKind, ScoreParams};
use crate::search::SearchMode;
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreOptions {
    pub aps_randomized: bool,
    pub raps_nu: f64,
    pub raps_kreg: usize,
    pub daps_delta: f64,
    pub daps_base: ScoreKind,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        let p = ScoreParams::default();
        Self {
            aps_randomized: p.aps_randomized,
            raps_nu: p.raps_nu,
            raps_kreg: p.raps_kreg,
            daps_delta: p.daps_delta,
            daps_base: p.daps_base,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcpOptions {
    /// One offset per `(attribute, value)` instead of per group.
    pub overlapping: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub metric: Metric,
    /// Closeness: max gap in difference mode, min ratio in ratio mode.
    pub c: f64,
    pub alpha: f64,
    pub score: ScoreKind,
    pub classwise: bool,
    /// Groups are attribute-value combinations.
    pub intersectional: bool,
    /// Attribute defining the groups; first attribute if unset.
    pub attribute: Option<String>,
    /// Labels the criterion applies to; all labels if unset.
    pub positive_labels: Option<Vec<usize>>,
    pub ratio_form: RatioForm,
    pub degenerate: DegeneratePolicy,
    pub seed: u64,
    pub lambda_grid: Option<Vec<f64>>,
    /// train/valid/calib/test fractions for data without split tags.
    pub splits: [f64; 4],
    pub search: SearchMode,
    pub score_params: ScoreOptions,
    pub gcp: GcpOptions,
    pub synth: SynthConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            metric: Metric::DemographicParity,
            c: 0.1,
            alpha: 0.1,
            score: ScoreKind::Aps,
            classwise: false,
            intersectional: false,
            attribute: None,
            positive_labels: None,
            ratio_form: RatioForm::default(),
            degenerate: DegeneratePolicy::default(),
            seed: 0,
            lambda_grid: None,
            splits: [0.3, 0.2, 0.25, 0.25],
            search: SearchMode::default(),
            score_params: ScoreOptions::default(),
            gcp: GcpOptions::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl Config {
    /// JSON for `.json` files, TOML otherwise.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Config = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.synth.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn spec(&self, num_classes: usize) -> Result<FairnessSpec> {
        let labels = match &self.positive_labels {
            Some(p) => LabelSet::new(num_classes, p.clone())?,
            None => LabelSet::all(num_classes)?,
        };
        Ok(FairnessSpec::new(self.metric, self.c, self.alpha, labels)?
            .classwise(self.classwise)
            .with_ratio_form(self.ratio_form)
            .with_degenerate(self.degenerate))
    }

    pub fn score_params(&self) -> ScoreParams {
        let o = &self.score_params;
        ScoreParams {
            kind: self.score,
            aps_randomized: o.aps_randomized,
            seed: self.seed,
            raps_nu: o.raps_nu,
            raps_kreg: o.raps_kreg,
            daps_delta: o.daps_delta,
            daps_base: o.daps_base,
        }
    }

    pub fn group_mode(&self, dataset: &Dataset) -> Result<GroupMode> {
        if self.intersectional {
            return Ok(GroupMode::Intersectional);
        }
        match &self.attribute {
            None => Ok(GroupMode::Single(0)),
            Some(name) => dataset
                .groups()
                .attribute_index(name)
                .map(GroupMode::Single)
                .ok_or_else(|| Error::Config(format!("unknown attribute '{name}'"))),
        }
    }
}
