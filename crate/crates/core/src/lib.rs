//! IDEA: a forecaster built from stacked groups of competing and
//! communicating base learners, each projecting onto a trend, seasonality
//! or free basis.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the bottom fix it to `f64`.

pub mod basis;
pub mod comms;
pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod gating;
pub mod model;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = diffcore::Tensor<f64>;
pub type Tape64 = diffcore::Tape<f64>;
pub type Model64 = model::IdeaModel<f64>;
pub type Model32 = model::IdeaModel<f32>;
