use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use idea::dataio::{Frequency, Protocol, SyntheticKind, SyntheticSpec};
use idea::evalkit::{MaseDenominator, OwaAggregation};
use idea::model::{Mode, ModelConfig};
use idea::train::{LossKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::args::Flags;

/// Weights of the per-frequency average in score tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    /// Number of evaluated series of each frequency.
    #[default]
    Dataset,
    /// The horizon-weighted counts printed with the TOURISM results.
    Paper,
}

/// Fully resolved run configuration, echoed as `config.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub freq: Option<Frequency>,
    pub protocol: Protocol,
    pub horizon: Option<usize>,
    pub lookback: Option<usize>,
    pub out: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub mase_denominator: MaseDenominator,
    pub owa_aggregation: OwaAggregation,
    pub weights: Weights,
    pub ensemble: bool,
    pub plot_data: bool,
    pub holdout: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            manifest: None,
            freq: None,
            protocol: Protocol::M4,
            horizon: None,
            lookback: None,
            out: PathBuf::from("out"),
            checkpoints: Vec::new(),
            mase_denominator: MaseDenominator::Paper,
            owa_aggregation: OwaAggregation::AggregateThenRatio,
            weights: Weights::Dataset,
            ensemble: false,
            plot_data: false,
            holdout: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SyntheticSpec::default(),
        }
    }
}

fn parse<T: FromStr>(name: &str, v: &Option<String>) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    v.as_deref()
        .map(|s| T::from_str(s).map_err(|e| anyhow::anyhow!("--{name}: {e}")))
        .transpose()
}

fn parse_serde<T: for<'de> Deserialize<'de>>(name: &str, v: &Option<String>) -> Result<Option<T>> {
    v.as_deref()
        .map(|s| {
            T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s))
                .map_err(|e| anyhow::anyhow!("--{name}: {e}"))
        })
        .transpose()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Defaults, then the `--config` file, then flags.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => Self::default(),
        };
        cfg.apply(flags)?;
        cfg.finish()?;
        Ok(cfg)
    }

    fn apply(&mut self, f: &Flags) -> Result<()> {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        if f.data.is_some() {
            self.data = f.data.clone();
        }
        if f.manifest.is_some() {
            self.manifest = f.manifest.clone();
        }
        if let Some(v) = parse::<Frequency>("freq", &f.freq)? {
            self.freq = Some(v);
        }
        set!(parse::<Protocol>("protocol", &f.protocol)? => self.protocol);
        if f.horizon.is_some() {
            self.horizon = f.horizon;
        }
        if f.lookback.is_some() {
            self.lookback = f.lookback;
        }
        set!(parse::<Mode>("mode", &f.mode)? => self.model.mode);
        set!(f.groups => self.model.groups);
        set!(f.learners => self.model.learners);
        set!(f.topk => self.model.top_k);
        set!(f.layers => self.model.layers);
        set!(f.hidden_width => self.model.hidden_width);
        set!(f.context_width => self.model.context_width);
        set!(f.alpha => self.model.alpha);
        set!(f.comm_dropout => self.model.comm_dropout);
        set!(parse::<LossKind>("loss", &f.loss)? => self.train.loss);
        set!(f.steps => self.train.steps);
        set!(f.batch => self.train.batch_size);
        set!(f.lr => self.train.learning_rate);
        set!(f.validation_interval => self.train.validation_interval);
        if let Some(s) = f.seed {
            self.model.seed = s;
            self.train.seed = s;
            self.synth.seed = s;
        }
        set!(f.out => self.out);
        if !f.checkpoints.is_empty() {
            self.checkpoints = f.checkpoints.clone();
        }
        set!(parse::<MaseDenominator>("mase-denominator", &f.mase_denominator)? => self.mase_denominator);
        set!(parse_serde::<OwaAggregation>("owa-aggregation", &f.owa_aggregation)? => self.owa_aggregation);
        set!(parse_serde::<Weights>("weights", &f.weights)? => self.weights);
        set!(parse_serde::<SyntheticKind>("kind", &f.kind)? => self.synth.kind);
        set!(f.count => self.synth.count);
        set!(f.length => self.synth.length);
        set!(f.period => self.synth.period);
        self.ensemble |= f.ensemble;
        self.plot_data |= f.plot_data;
        self.holdout |= f.holdout;
        Ok(())
    }

    /// Derives horizon, lookback and period from the frequency when they
    /// are not given, so that the echo is self-contained.
    fn finish(&mut self) -> Result<()> {
        let proto = self.freq.and_then(|f| self.protocol.horizon(f));
        if self.freq.is_some() && proto.is_none() && self.horizon.is_none() {
            bail!(
                "frequency {} has no horizon under the {:?} protocol; pass --horizon",
                self.freq.unwrap(),
                self.protocol
            );
        }
        if let Some(h) = self.horizon.or(proto.map(|p| p.1)) {
            self.model.horizon = h;
            self.model.lookback = self.lookback.unwrap_or(2 * h);
        } else if let Some(t) = self.lookback {
            self.model.lookback = t;
        }
        if let Some((period, _)) = proto {
            self.train.period = period;
        }
        if let Some(f) = self.freq {
            self.synth.frequency = f;
        }
        self.synth.horizon = self.model.horizon;
        self.horizon = Some(self.model.horizon);
        self.lookback = Some(self.model.lookback);
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Writes the resolved configuration into the output directory.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
