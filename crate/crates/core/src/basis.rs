//! Fixed projection bases turning learner coefficients into backcasts and
//! forecasts.
//!
//! Trend learners fit a polynomial `[1, τ, …, τ^p]`, seasonality learners a
//! truncated Fourier series whose harmonic count is fixed by the horizon,
//! and generic learners emit their backcast and forecast directly. The
//! backcast basis is sampled on `[0, …, t−1]/t` and the forecast basis on
//! `[0, …, H−1]/H`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Trend,
    Seasonality,
    Generic,
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LearnerKind::Trend => "trend",
            LearnerKind::Seasonality => "seasonality",
            LearnerKind::Generic => "generic",
        })
    }
}

/// Number of harmonics `⌊H/2 − 1⌋` used by the seasonality basis.
pub fn harmonics(horizon: usize) -> usize {
    (horizon / 2).saturating_sub(1)
}

/// Column count `2⌊H/2 − 1⌋ + 1` of the seasonality basis.
pub fn seasonality_dim(horizon: usize) -> usize {
    2 * harmonics(horizon) + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: LearnerKind,
    /// Polynomial degree; only meaningful for trend learners.
    pub degree: usize,
    pub backcast_length: usize,
    pub forecast_length: usize,
}

impl BasisSpec {
    pub fn new(kind: LearnerKind, degree: usize, backcast_length: usize, forecast_length: usize) -> Result<Self> {
        let spec = Self {
            kind,
            degree,
            backcast_length,
            forecast_length,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.backcast_length == 0 || self.forecast_length == 0 {
            return Err(Error::arg("basis", "backcast and forecast lengths must be positive"));
        }
        match self.kind {
            LearnerKind::Trend => {
                let shortest = self.backcast_length.min(self.forecast_length);
                if self.degree >= shortest {
                    return Err(Error::arg(
                        "basis",
                        format!("trend degree {} needs grids longer than {}", self.degree, shortest),
                    ));
                }
            }
            LearnerKind::Seasonality => {
                if self.forecast_length < 4 {
                    return Err(Error::arg("basis", "seasonality needs a horizon of at least 4"));
                }
            }
            LearnerKind::Generic => {}
        }
        Ok(())
    }

    /// Coefficient count of the backcast direction.
    pub fn backcast_dim(&self) -> usize {
        match self.kind {
            LearnerKind::Trend => self.degree + 1,
            LearnerKind::Seasonality => seasonality_dim(self.forecast_length),
            LearnerKind::Generic => self.backcast_length,
        }
    }

    /// Coefficient count of the forecast direction.
    pub fn forecast_dim(&self) -> usize {
        match self.kind {
            LearnerKind::Trend => self.degree + 1,
            LearnerKind::Seasonality => seasonality_dim(self.forecast_length),
            LearnerKind::Generic => self.forecast_length,
        }
    }

    /// `(backcast basis, forecast basis)`; `None` for the identity of
    /// generic learners.
    pub fn matrices<T: Scalar>(&self) -> Result<Option<(BasisMatrix<T>, BasisMatrix<T>)>> {
        self.validate()?;
        Ok(match self.kind {
            LearnerKind::Trend => Some((
                make_trend_basis(self.degree, self.backcast_length)?,
                make_trend_basis(self.degree, self.forecast_length)?,
            )),
            LearnerKind::Seasonality => Some((
                make_seasonality_basis(self.forecast_length, self.backcast_length)?,
                make_seasonality_basis(self.forecast_length, self.forecast_length)?,
            )),
            LearnerKind::Generic => None,
        })
    }
}

/// Constant `rows × cols` basis; output = basis · coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix<T> {
    values: Tensor<T>,
}

impl<T: Scalar> BasisMatrix<T> {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.values.at(i, j)
    }

    /// `cols × rows` copy, for right-multiplying row-vector coefficients.
    pub fn transposed(&self) -> Tensor<T> {
        let (r, c) = (self.rows(), self.cols());
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.values.at(i, j);
            }
        }
        Tensor::new(vec![c, r], data).expect("transpose shape")
    }

    pub fn apply(&self, coefficients: &[T]) -> Result<Vec<T>> {
        if coefficients.len() != self.cols() {
            return Err(Error::shape("project", &[self.values.shape(), &[coefficients.len()]]));
        }
        Ok((0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.at(i, j) * coefficients[j]).sum())
            .collect())
    }
}

fn grid(length: usize) -> impl Iterator<Item = f64> {
    (0..length).map(move |i| i as f64 / length as f64)
}

/// Polynomial basis: entry `(i, j) = (i/length)^j`, `j = 0..=p`.
pub fn make_trend_basis<T: Scalar>(degree: usize, length: usize) -> Result<BasisMatrix<T>> {
    if length == 0 {
        return Err(Error::arg("make_trend_basis", "length must be positive"));
    }
    if degree >= length {
        return Err(Error::arg(
            "make_trend_basis",
            format!("degree {degree} over-parameterises a grid of {length} points"),
        ));
    }
    let cols = degree + 1;
    let mut data = Vec::with_capacity(length * cols);
    for tau in grid(length) {
        data.extend((0..cols).map(|j| T::of(tau.powi(j as i32))));
    }
    Ok(BasisMatrix {
        values: Tensor::new(vec![length, cols], data)?,
    })
}

/// Fourier basis `[1, cos(2πkτ)…, sin(2πkτ)…]`, `k = 1..=⌊H/2 − 1⌋`.
pub fn make_seasonality_basis<T: Scalar>(horizon: usize, length: usize) -> Result<BasisMatrix<T>> {
    if horizon < 4 {
        return Err(Error::arg(
            "make_seasonality_basis",
            format!("horizon {horizon} < 4 leaves no harmonics"),
        ));
    }
    if length == 0 {
        return Err(Error::arg("make_seasonality_basis", "length must be positive"));
    }
    let h = harmonics(horizon);
    let cols = 2 * h + 1;
    let mut data = Vec::with_capacity(length * cols);
    for tau in grid(length) {
        data.push(T::one());
        data.extend((1..=h).map(|k| T::of((2.0 * PI * k as f64 * tau).cos())));
        data.extend((1..=h).map(|k| T::of((2.0 * PI * k as f64 * tau).sin())));
    }
    Ok(BasisMatrix {
        values: Tensor::new(vec![length, cols], data)?,
    })
}

/// Maps split coefficients to `(backcast, forecast)`.
pub fn project<T: Scalar>(theta_b: &[T], theta_f: &[T], spec: &BasisSpec) -> Result<(Vec<T>, Vec<T>)> {
    if theta_b.len() != spec.backcast_dim() || theta_f.len() != spec.forecast_dim() {
        return Err(Error::shape(
            "project",
            &[
                &[theta_b.len(), theta_f.len()],
                &[spec.backcast_dim(), spec.forecast_dim()],
            ],
        ));
    }
    match spec.matrices::<T>()? {
        None => Ok((theta_b.to_vec(), theta_f.to_vec())),
        Some((back, fore)) => Ok((back.apply(theta_b)?, fore.apply(theta_f)?)),
    }
}
