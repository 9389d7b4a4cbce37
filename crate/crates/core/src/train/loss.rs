use serde::{Deserialize, Serialize};
use std::str::FromStr;

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Smape,
    Mape,
    /// Error scaled by the lookback's mean seasonal difference.
    Mase,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "smape" => Ok(Self::Smape),
            "mape" => Ok(Self::Mape),
            "mase" => Ok(Self::Mase),
            other => Err(Error::InvalidConfig(vec![format!("unknown loss `{other}`")])),
        }
    }
}

/// `(200/H) Σ |y − ŷ| / (|y| + |ŷ| + ε)`.
pub fn smape_loss<T: Scalar>(yhat: &[T], y: &[T], epsilon: T) -> Result<T> {
    if yhat.len() != y.len() || y.is_empty() {
        return Err(Error::shape("smape_loss", &[&[yhat.len()], &[y.len()]]));
    }
    if !(epsilon > T::zero()) {
        return Err(Error::arg("smape_loss", "epsilon must be positive"));
    }
    let total: T = y
        .iter()
        .zip(yhat)
        .map(|(&a, &f)| (a - f).abs() / (a.abs() + f.abs() + epsilon))
        .sum();
    Ok(T::of(200.0) * total / T::of(y.len() as f64))
}

/// Mean absolute lag-`period` difference of each lookback row.
fn lookback_scales<T: Scalar>(x: &Tensor<T>, period: usize) -> Vec<T> {
    (0..x.rows())
        .map(|b| {
            let row = x.row(b);
            let s = period.clamp(1, row.len().saturating_sub(1).max(1));
            if row.len() <= s {
                return T::one();
            }
            let n = T::of((row.len() - s) as f64);
            (s..row.len()).map(|j| (row[j] - row[j - s]).abs()).sum::<T>() / n
        })
        .collect()
}

/// Records the loss of `yhat` (`[B, H]`) against constant targets.
/// Returns the batch mean and the `[B]` per-sample losses.
pub fn record_loss<T: Scalar>(
    tape: &mut Tape<T>,
    kind: LossKind,
    yhat: Var,
    y: &Tensor<T>,
    x: &Tensor<T>,
    epsilon: T,
    period: usize,
) -> Result<(Var, Var)> {
    if tape.shape(yhat) != y.shape() {
        return Err(Error::shape("loss", &[tape.shape(yhat), y.shape()]));
    }
    let target = tape.constant(y.clone());
    let diff = tape.sub(target, yhat)?;
    let num = tape.abs(diff)?;
    let (ratio, factor) = match kind {
        LossKind::Smape => {
            let ay = tape.constant(y.map(|v| v.abs()));
            let af = tape.abs(yhat)?;
            let den = tape.add(ay, af)?;
            let den = tape.add_scalar(den, epsilon)?;
            (tape.div(num, den)?, 200.0)
        }
        LossKind::Mape => {
            let w = tape.constant(y.map(|v| T::one() / (v.abs() + epsilon)));
            (tape.mul(num, w)?, 100.0)
        }
        LossKind::Mase => {
            let scales = lookback_scales(x, period);
            let h = y.row_len();
            let w: Vec<T> = scales
                .iter()
                .flat_map(|&s| std::iter::repeat(T::one() / (s + epsilon)).take(h))
                .collect();
            let w = tape.constant(Tensor::new(y.shape().to_vec(), w)?);
            (tape.mul(num, w)?, 1.0)
        }
    };
    let per = tape.mean_axis(ratio, 1)?;
    let per = tape.scale(per, T::of(factor))?;
    Ok((tape.mean(per)?, per))
}
