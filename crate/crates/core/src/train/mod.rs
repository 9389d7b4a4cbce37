//! Losses, window sampling and the training loop.

mod ensemble;
mod loss;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ensemble::{build_lookback_ensemble, median, EnsembleSlot, LookbackEnsemble, DEFAULT_MULTIPLIERS};
pub use loss::{record_loss, smape_loss, LossKind};

use crate::dataio::Window;
use crate::diffcore::{AdamConfig, AdamState, Binding, Tape, Tensor};
use crate::error::{Error, Result};
use crate::evalkit;
use crate::model::{ForwardOptions, IdeaModel};
use crate::scalar::Scalar;

/// Mixed into the training seed for the dropout streams.
const DROPOUT_SEED_SALT: u64 = 0x5EED_D0D0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Multiply the rate by `factor` every `every` steps.
    Step { every: usize, factor: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, factor } => base * factor.powi((step / every.max(1)) as i32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub loss_epsilon: f64,
    /// Fraction of the validation-eligible series scored at each log point.
    pub validation_fraction: f64,
    pub validation_interval: usize,
    /// Seasonal lag of the MASE loss scale.
    pub period: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Smape,
            batch_size: 128,
            steps: 1000,
            learning_rate: 1e-3,
            schedule: LrSchedule::Constant,
            loss_epsilon: 1e-8,
            validation_fraction: 1.0,
            validation_interval: 100,
            period: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.loss_epsilon > 0.0) {
            errs.push(format!("loss_epsilon = {} must be > 0", self.loss_epsilon));
        }
        if self.batch_size < 1 {
            errs.push("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("learning_rate = {} must be finite and >= 0", self.learning_rate));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 1.0) {
            errs.push(format!("validation_fraction = {} must lie in (0, 1]", self.validation_fraction));
        }
        if self.validation_interval < 1 {
            errs.push("validation_interval must be >= 1".into());
        }
        if let LrSchedule::Step { every, factor } = self.schedule {
            if every < 1 || !(factor > 0.0) {
                errs.push("step schedule needs every >= 1 and factor > 0".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

/// Draws `(series, anchor)` pairs: a uniform eligible series, then with
/// probability one half one of its last `H` anchors, otherwise any anchor.
#[derive(Clone, Debug)]
pub struct WindowSampler<'a, T> {
    series: &'a [Vec<T>],
    lookback: usize,
    horizon: usize,
    eligible: Vec<usize>,
}

impl<'a, T: Scalar> WindowSampler<'a, T> {
    pub fn new(series: &'a [Vec<T>], lookback: usize, horizon: usize) -> Result<Self> {
        let eligible: Vec<usize> = (0..series.len())
            .filter(|&i| series[i].len() >= lookback + horizon)
            .collect();
        if eligible.is_empty() {
            return Err(Error::Data(format!(
                "no series has the {} points needed for lookback {lookback} and horizon {horizon}",
                lookback + horizon
            )));
        }
        Ok(Self {
            series,
            lookback,
            horizon,
            eligible,
        })
    }

    pub fn eligible(&self) -> &[usize] {
        &self.eligible
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let s = self.eligible[rng.gen_range(0..self.eligible.len())];
        let first = self.lookback;
        let last = self.series[s].len() - self.horizon;
        let anchor = if rng.gen_bool(0.5) {
            let recent = (last - first + 1).min(self.horizon);
            last + 1 - recent + rng.gen_range(0..recent)
        } else {
            rng.gen_range(first..=last)
        };
        (s, anchor)
    }

    pub fn window(&self, series: usize, anchor: usize) -> Window<T> {
        let v = &self.series[series];
        Window {
            series,
            anchor,
            x: v[anchor - self.lookback..anchor].to_vec(),
            y: v[anchor..anchor + self.horizon].to_vec(),
        }
    }
}

/// Divisor applied to a window before it enters the model.
pub fn window_scale<T: Scalar>(x: &[T], epsilon: T) -> T {
    let m = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if m > epsilon {
        m
    } else {
        T::one()
    }
}

/// Scaled `[B, t]` inputs and `[B, H]` targets of a batch.
fn scaled_batch<T: Scalar>(windows: &[Window<T>], epsilon: T) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut xs = Vec::with_capacity(windows.len());
    let mut ys = Vec::with_capacity(windows.len());
    for w in windows {
        let s = window_scale(&w.x, epsilon);
        xs.push(w.x.iter().map(|&v| v / s).collect::<Vec<_>>());
        ys.push(w.y.iter().map(|&v| v / s).collect::<Vec<_>>());
    }
    Ok((Tensor::from_rows(&xs)?, Tensor::from_rows(&ys)?))
}

/// Optimiser state carried across steps.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub adam: AdamState<T>,
    pub step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &IdeaModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(
            model.store.values(),
            AdamConfig {
                learning_rate: config.learning_rate,
                ..AdamConfig::default()
            },
        );
        Ok(Self { config, adam, step: 0 })
    }

    /// Mean loss over the batch, one backward pass and one Adam update, with
    /// communication dropout on.
    pub fn train_step(&mut self, model: &mut IdeaModel<T>, batch: &[Window<T>]) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let eps = T::of(self.config.loss_epsilon);
        let (x, y) = scaled_batch(batch, eps)?;
        if x.row_len() != model.config.lookback || y.row_len() != model.config.horizon {
            return Err(Error::shape(
                "train_step",
                &[&[x.row_len(), y.row_len()], &[model.config.lookback, model.config.horizon]],
            ));
        }
        let mut tape = Tape::new();
        let mut binding = Binding::new(&model.store);
        let xv = tape.constant(x.clone());
        let opts = ForwardOptions {
            training: true,
            seed: self.config.seed ^ DROPOUT_SEED_SALT,
            sample_offset: (self.step * self.config.batch_size) as u64,
        };
        let out = model.forward(&mut tape, &mut binding, xv, &opts)?;
        let (loss, per) = record_loss(&mut tape, self.config.loss, out.forecast, &y, &x, eps, self.config.period)?;
        if let Some(sample) = tape.value(per).data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { step: self.step, sample });
        }
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        let grads = binding.collect(&mut grads);
        self.adam
            .set_learning_rate(self.config.schedule.rate(self.config.learning_rate, self.step));
        self.adam.step(model.store.values_mut(), &grads)?;
        self.step += 1;
        Ok(value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    /// Steps completed.
    pub step: usize,
    /// Mean training loss since the previous entry.
    pub train_loss: f64,
    /// `None` when no series is long enough to hold out a validation horizon.
    pub val_smape: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,val_smape\n");
        for e in &self.entries {
            let v = e.val_smape.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", e.step, e.train_loss, v);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Training pool and held-out validation windows of a collection.
struct Split<T> {
    train: Vec<Vec<T>>,
    validation: Vec<Window<T>>,
}

/// Series with room for `t + 2H` points lose their last `H` points to
/// validation; shorter series train on everything they have.
fn split_validation<T: Scalar>(series: &[Vec<T>], t: usize, h: usize, fraction: f64, seed: u64) -> Split<T> {
    let mut train = Vec::with_capacity(series.len());
    let mut validation = Vec::new();
    for (i, s) in series.iter().enumerate() {
        if s.len() >= t + 2 * h {
            let cut = s.len() - h;
            train.push(s[..cut].to_vec());
            validation.push(Window {
                series: i,
                anchor: cut,
                x: s[cut - t..cut].to_vec(),
                y: s[cut..].to_vec(),
            });
        } else {
            train.push(s.clone());
        }
    }
    if fraction < 1.0 && !validation.is_empty() {
        let keep = ((validation.len() as f64 * fraction).ceil() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        validation.shuffle(&mut rng);
        validation.truncate(keep);
        validation.sort_by_key(|w| w.series);
    }
    Split { train, validation }
}

/// Mean sMAPE of the model on the given windows, in the original scale.
pub fn validation_smape<T: Scalar>(model: &IdeaModel<T>, windows: &[Window<T>]) -> Result<f64> {
    let xs: Vec<Vec<T>> = windows.iter().map(|w| w.x.clone()).collect();
    let preds = predict(model, &xs)?;
    let mut total = 0.0;
    for (p, w) in preds.iter().zip(windows) {
        let p: Vec<f64> = p.iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = w.y.iter().map(|v| v.as_f64()).collect();
        total += evalkit::smape(&p, &y)?;
    }
    Ok(total / windows.len().max(1) as f64)
}

/// Trains `model` in place on windows drawn from `series`. The log has
/// `ceil(steps / validation_interval)` entries.
pub fn fit<T: Scalar>(model: &mut IdeaModel<T>, series: &[Vec<T>], config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    if series.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let (t, h) = (model.config.lookback, model.config.horizon);
    let split = split_validation(series, t, h, config.validation_fraction, config.seed);
    let sampler = WindowSampler::new(&split.train, t, h)?;
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainLog::default();
    let mut running = 0.0;
    let mut since = 0usize;
    for step in 0..config.steps {
        let batch: Vec<Window<T>> = (0..config.batch_size)
            .map(|_| {
                let (s, a) = sampler.sample(&mut rng);
                sampler.window(s, a)
            })
            .collect();
        running += trainer.train_step(model, &batch)?.as_f64();
        since += 1;
        let done = step + 1;
        if done % config.validation_interval == 0 || done == config.steps {
            let val = if split.validation.is_empty() {
                None
            } else {
                Some(validation_smape(model, &split.validation)?)
            };
            let entry = LogEntry {
                step: done,
                train_loss: running / since as f64,
                val_smape: val,
            };
            log::debug!("step {} loss {:.4} val {:?}", entry.step, entry.train_loss, entry.val_smape);
            log.entries.push(entry);
            running = 0.0;
            since = 0;
        }
    }
    Ok(log)
}

/// Forecasts from the last `t` points of each history, scaled in and out.
pub fn predict<T: Scalar>(model: &IdeaModel<T>, histories: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let t = model.config.lookback;
    let eps = T::of(1e-8);
    let mut xs = Vec::with_capacity(histories.len());
    let mut scales = Vec::with_capacity(histories.len());
    for (i, h) in histories.iter().enumerate() {
        if h.len() < t {
            return Err(Error::Data(format!(
                "series {i} has {} points, lookback needs {t}",
                h.len()
            )));
        }
        let x = &h[h.len() - t..];
        let s = window_scale(x, eps);
        xs.push(x.iter().map(|&v| v / s).collect::<Vec<_>>());
        scales.push(s);
    }
    let out = model.predict(&xs)?;
    Ok(out
        .into_iter()
        .zip(scales)
        .map(|(f, s)| f.into_iter().map(|v| v * s).collect())
        .collect())
}
