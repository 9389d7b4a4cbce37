//! Minimal reverse-mode differentiation engine plus the Adam optimizer.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_record, GradCheckReport, LeafReport, LOSS_FLOOR, MAGNITUDE_FLOOR};
pub use params::{glorot_uniform, uniform, Binding, ParamId, ParamStore};
pub use tape::{Gradients, Op, Tape, Var};
pub use tensor::Tensor;
