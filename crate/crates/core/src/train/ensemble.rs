use crate::error::{Error, Result};
use crate::model::{IdeaModel, ModelConfig};
use crate::scalar::Scalar;

use super::{fit, predict, TrainConfig, TrainLog};

/// Lookback multiples of the horizon, one model each.
pub const DEFAULT_MULTIPLIERS: [usize; 6] = [2, 3, 4, 5, 6, 7];

#[derive(Clone, Debug)]
pub struct EnsembleSlot<T> {
    pub multiplier: usize,
    pub lookback: usize,
    pub model: IdeaModel<T>,
    pub log: TrainLog,
    /// Series long enough for this slot.
    pub used: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug)]
pub struct LookbackEnsemble<T> {
    pub horizon: usize,
    pub slots: Vec<EnsembleSlot<T>>,
}

/// Median of a non-empty slice; mean of the two middle values when even.
pub fn median<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / T::of(2.0)
    }
}

/// Trains one model per multiplier `m` with lookback `m·H`. Slot `i` uses
/// model and training seeds offset by `i`.
pub fn build_lookback_ensemble<T: Scalar>(
    series: &[Vec<T>],
    base: &ModelConfig,
    train: &TrainConfig,
    multipliers: &[usize],
) -> Result<LookbackEnsemble<T>> {
    if multipliers.is_empty() || multipliers.iter().any(|m| !(2..=7).contains(m)) {
        return Err(Error::InvalidConfig(vec![format!(
            "lookback multipliers {multipliers:?} must be a non-empty subset of 2..=7"
        )]));
    }
    let h = base.horizon;
    let mut slots = Vec::with_capacity(multipliers.len());
    for (i, &m) in multipliers.iter().enumerate() {
        let t = m * h;
        let pool: Vec<Vec<T>> = series.iter().filter(|s| s.len() >= t + h).cloned().collect();
        let dropped = series.len() - pool.len();
        if dropped > 0 {
            log::info!("lookback {t}: dropped {dropped} of {} series shorter than {}", series.len(), t + h);
        }
        let config = ModelConfig {
            lookback: t,
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        };
        let mut model = IdeaModel::new(config)?;
        let tc = TrainConfig {
            seed: train.seed.wrapping_add(i as u64),
            ..train.clone()
        };
        let log = if pool.is_empty() {
            return Err(Error::Data(format!("no series is long enough for lookback {t}")));
        } else {
            fit(&mut model, &pool, &tc)?
        };
        slots.push(EnsembleSlot {
            multiplier: m,
            lookback: t,
            model,
            log,
            used: pool.len(),
            dropped,
        });
    }
    Ok(LookbackEnsemble { horizon: h, slots })
}

impl<T: Scalar> LookbackEnsemble<T> {
    /// Per slot, per history: the forecast, or `None` when the history is
    /// shorter than the slot's lookback.
    pub fn slot_forecasts(&self, histories: &[Vec<T>]) -> Result<Vec<Vec<Option<Vec<T>>>>> {
        let mut out = Vec::with_capacity(self.slots.len());
        for slot in &self.slots {
            let idx: Vec<usize> = (0..histories.len())
                .filter(|&i| histories[i].len() >= slot.lookback)
                .collect();
            let subset: Vec<Vec<T>> = idx.iter().map(|&i| histories[i].clone()).collect();
            let preds = predict(&slot.model, &subset)?;
            let mut row = vec![None; histories.len()];
            for (i, p) in idx.into_iter().zip(preds) {
                row[i] = Some(p);
            }
            out.push(row);
        }
        Ok(out)
    }

    /// Elementwise median over the slots that could forecast each history.
    pub fn forecast(&self, histories: &[Vec<T>]) -> Result<Vec<Option<Vec<T>>>> {
        let per_slot = self.slot_forecasts(histories)?;
        Ok((0..histories.len())
            .map(|i| {
                let avail: Vec<&Vec<T>> = per_slot.iter().filter_map(|s| s[i].as_ref()).collect();
                if avail.is_empty() {
                    return None;
                }
                Some(
                    (0..self.horizon)
                        .map(|j| median(&mut avail.iter().map(|f| f[j]).collect::<Vec<_>>()))
                        .collect(),
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    #[test]
    fn median_cases() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut [7.0; 6]), 7.0);
    }

    fn base() -> ModelConfig {
        ModelConfig {
            groups: 1,
            learners: 3,
            top_k: 2,
            layers: 1,
            hidden_width: 4,
            context_width: 4,
            key_width: 4,
            value_width: 4,
            comm_width: 4,
            horizon: 4,
            mode: Mode::Generic,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn slots_cover_multipliers_and_count_drops() {
        let series: Vec<Vec<f64>> = [12, 20, 36].iter().map(|&n| (0..n).map(|i| 1.0 + i as f64).collect()).collect();
        let train = TrainConfig {
            steps: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let ens = build_lookback_ensemble(&series, &base(), &train, &DEFAULT_MULTIPLIERS).unwrap();
        let lookbacks: Vec<usize> = ens.slots.iter().map(|s| s.lookback).collect();
        assert_eq!(lookbacks, vec![8, 12, 16, 20, 24, 28]);
        for s in &ens.slots {
            assert_eq!(s.used + s.dropped, series.len());
        }
        assert_eq!(ens.slots[0].used, 3);
        assert_eq!(ens.slots[5].used, 1);
    }

    #[test]
    fn single_slot_is_its_model() {
        let series = vec![(0..30).map(|i| 2.0 + i as f64).collect::<Vec<f64>>()];
        let train = TrainConfig {
            steps: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let ens = build_lookback_ensemble(&series, &base(), &train, &[3]).unwrap();
        let direct = predict(&ens.slots[0].model, &series).unwrap();
        assert_eq!(ens.forecast(&series).unwrap()[0].as_ref().unwrap(), &direct[0]);
        assert!(build_lookback_ensemble(&series, &base(), &train, &[1]).is_err());
    }
}
