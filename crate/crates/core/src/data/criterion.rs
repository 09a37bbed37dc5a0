use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::LabelSet;
use crate::error::{Error, Result};

/// Group-fairness criterion adapted to prediction-set membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    DemographicParity,
    EqualOpportunity,
    PredictiveEquality,
    EqualizedOdds,
    DisparateImpact,
    /// Interval-valued positive predictive value built from equal
    /// opportunity and demographic parity coverages.
    PredictiveParity,
    PredictiveParityProxy,
}

/// Condition a calibration item must meet to enter a `(group, label)` slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceCondition {
    /// `x ∈ g`
    InGroup,
    /// `x ∈ g ∧ y = ỹ`
    InGroupWithLabel,
    /// `x ∈ g ∧ y ≠ ỹ`
    InGroupWithoutLabel,
}

impl SliceCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            SliceCondition::InGroup => "in_group",
            SliceCondition::InGroupWithLabel => "in_group_with_label",
            SliceCondition::InGroupWithoutLabel => "in_group_without_label",
        }
    }
}

impl fmt::Display for SliceCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::DemographicParity,
        Metric::EqualOpportunity,
        Metric::PredictiveEquality,
        Metric::EqualizedOdds,
        Metric::DisparateImpact,
        Metric::PredictiveParity,
        Metric::PredictiveParityProxy,
    ];

    /// Slice conditions whose coverages the metric needs.
    pub fn conditions(self) -> &'static [SliceCondition] {
        match self {
            Metric::DemographicParity | Metric::DisparateImpact | Metric::PredictiveParityProxy => {
                &[SliceCondition::InGroup]
            }
            Metric::EqualOpportunity => &[SliceCondition::InGroupWithLabel],
            Metric::PredictiveEquality => &[SliceCondition::InGroupWithoutLabel],
            Metric::EqualizedOdds => &[
                SliceCondition::InGroupWithLabel,
                SliceCondition::InGroupWithoutLabel,
            ],
            Metric::PredictiveParity => &[SliceCondition::InGroupWithLabel, SliceCondition::InGroup],
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Metric::DisparateImpact => Mode::Ratio,
            _ => Mode::Difference,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::DemographicParity => "demographic_parity",
            Metric::EqualOpportunity => "equal_opportunity",
            Metric::PredictiveEquality => "predictive_equality",
            Metric::EqualizedOdds => "equalized_odds",
            Metric::DisparateImpact => "disparate_impact",
            Metric::PredictiveParity => "predictive_parity",
            Metric::PredictiveParityProxy => "predictive_parity_proxy",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .or(match norm.as_str() {
                "dp" | "statistical_parity" => Some(Metric::DemographicParity),
                "eo" | "eopp" => Some(Metric::EqualOpportunity),
                "pe" => Some(Metric::PredictiveEquality),
                "eodds" => Some(Metric::EqualizedOdds),
                "di" => Some(Metric::DisparateImpact),
                "pp" => Some(Metric::PredictiveParity),
                "ppp" => Some(Metric::PredictiveParityProxy),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown metric '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Difference,
    Ratio,
}

/// Which quantities the ratio-mode check divides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioForm {
    /// `(1 − α_max) / (1 − α_min)`
    #[default]
    Miscoverage,
    /// `α_min / α_max`, with `α_min` floored at zero.
    Coverage,
}

/// What to do with a `(group, label)` slice that has no calibration items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    #[default]
    Error,
    SkipWithWarning,
}

/// A fairness criterion: metric, closeness `c`, positive labels, and the
/// miscoverage level of the underlying conformal predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    pub metric: Metric,
    pub closeness: f64,
    pub mode: Mode,
    pub classwise: bool,
    pub alpha: f64,
    pub labels: LabelSet,
    pub ratio_form: RatioForm,
    pub degenerate: DegeneratePolicy,
}

impl FairnessSpec {
    pub fn new(metric: Metric, closeness: f64, alpha: f64, labels: LabelSet) -> Result<Self> {
        if !(closeness > 0.0 && closeness <= 1.0) {
            return Err(Error::Config(format!("closeness c={closeness} must lie in (0, 1]")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha={alpha} must lie in (0, 1)")));
        }
        Ok(Self {
            metric,
            closeness,
            mode: metric.mode(),
            classwise: false,
            alpha,
            labels,
            ratio_form: RatioForm::default(),
            degenerate: DegeneratePolicy::default(),
        })
    }

    pub fn classwise(mut self, classwise: bool) -> Self {
        self.classwise = classwise;
        self
    }

    pub fn with_ratio_form(mut self, form: RatioForm) -> Self {
        self.ratio_form = form;
        self
    }

    pub fn with_degenerate(mut self, policy: DegeneratePolicy) -> Self {
        self.degenerate = policy;
        self
    }

    /// Same criterion restricted to other positive labels.
    pub fn with_positive(&self, positive: Vec<usize>) -> Result<Self> {
        let mut out = self.clone();
        out.labels = LabelSet::new(self.labels.num_classes(), positive)?;
        Ok(out)
    }

    /// Same criterion under another metric (mode follows the metric).
    pub fn with_metric(&self, metric: Metric) -> Self {
        let mut out = self.clone();
        out.metric = metric;
        out.mode = metric.mode();
        out
    }
}
