use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::LearnerKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Groups cycle trend, seasonality and generic learners.
    Interpretable,
    /// Every learner is generic.
    Generic,
}

impl Mode {
    pub fn kind_of(self, learner: usize) -> LearnerKind {
        match self {
            Mode::Generic => LearnerKind::Generic,
            Mode::Interpretable => [LearnerKind::Trend, LearnerKind::Seasonality, LearnerKind::Generic][learner % 3],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Interpretable => "interpretable",
            Mode::Generic => "generic",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "interpretable" => Ok(Mode::Interpretable),
            "generic" => Ok(Mode::Generic),
            other => Err(Error::InvalidConfig(vec![format!("unknown mode `{other}`")])),
        }
    }
}

/// Structural hyperparameters of an IDEA stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of stacked groups `L`.
    pub groups: usize,
    /// Learners per group `G`.
    pub learners: usize,
    /// Learners activated per group and sample.
    pub top_k: usize,
    /// Fully-connected layers per learner `M`.
    pub layers: usize,
    pub hidden_width: usize,
    /// Width `D` of every learner context.
    pub context_width: usize,
    pub key_width: usize,
    pub value_width: usize,
    pub comm_width: usize,
    pub alpha: f64,
    pub comm_dropout: f64,
    pub trend_degree: usize,
    pub mode: Mode,
    pub lookback: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            groups: 4,
            learners: 3,
            top_k: 2,
            layers: 4,
            hidden_width: 256,
            context_width: 64,
            key_width: 64,
            value_width: 64,
            comm_width: 64,
            alpha: 0.1,
            comm_dropout: 0.5,
            trend_degree: 2,
            mode: Mode::Interpretable,
            lookback: 36,
            horizon: 18,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn learner_kinds(&self) -> Vec<LearnerKind> {
        (0..self.learners).map(|g| self.mode.kind_of(g)).collect()
    }

    /// Collects every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.groups < 1 {
            errs.push("groups must be >= 1".to_string());
        }
        if self.learners < 1 {
            errs.push("learners must be >= 1".to_string());
        }
        if self.top_k < 1 || self.top_k > self.learners {
            errs.push(format!("top_k = {} must lie in 1..={}", self.top_k, self.learners));
        }
        if self.layers < 1 {
            errs.push("layers must be >= 1".to_string());
        }
        for (name, v) in [
            ("hidden_width", self.hidden_width),
            ("context_width", self.context_width),
            ("key_width", self.key_width),
            ("value_width", self.value_width),
            ("comm_width", self.comm_width),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
        ] {
            if v < 1 {
                errs.push(format!("{name} must be >= 1"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            errs.push(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if !(0.0..1.0).contains(&self.comm_dropout) {
            errs.push(format!("comm_dropout = {} must lie in [0, 1)", self.comm_dropout));
        }
        let kinds = self.learner_kinds();
        if kinds.contains(&LearnerKind::Trend) && self.trend_degree >= self.lookback.min(self.horizon) {
            errs.push(format!(
                "trend_degree = {} must be below min(lookback, horizon) = {}",
                self.trend_degree,
                self.lookback.min(self.horizon)
            ));
        }
        if kinds.contains(&LearnerKind::Seasonality) && self.horizon < 4 {
            errs.push(format!("seasonality learners need horizon >= 4, got {}", self.horizon));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}
