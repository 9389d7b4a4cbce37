//! Central finite-difference checks of reverse-mode gradients.

use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Gradients below this magnitude are compared in absolute terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

/// The floor also grows with the checked value: finite-difference round-off
/// is proportional to `|f|`, so components below `LOSS_FLOOR * |f|` are
/// compared in absolute terms too.
pub const LOSS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct LeafReport {
    pub leaf: usize,
    /// `max|analytic − numeric| / max(max|analytic|, max|numeric|, floor)`
    /// with `floor = max(MAGNITUDE_FLOOR, LOSS_FLOOR * |f|)`.
    pub relative_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.leaves.iter().map(|l| l.relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_relative_error() < self.tolerance
    }
}

fn compare<T: Scalar>(leaf: usize, analytic: &Tensor<T>, numeric: &[f64], value: f64) -> LeafReport {
    let mut max_diff = 0.0f64;
    let mut scale = MAGNITUDE_FLOOR.max(LOSS_FLOOR * value.abs());
    for (&a, &n) in analytic.data().iter().zip(numeric) {
        let a = a.as_f64();
        max_diff = max_diff.max((a - n).abs());
        scale = scale.max(a.abs()).max(n.abs());
    }
    LeafReport {
        leaf,
        relative_error: max_diff / scale,
        max_abs_error: max_diff,
    }
}

fn scalar_of<T: Scalar>(tape: &Tape<T>, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    Ok(v.data()[0].as_f64())
}

/// Checks `build` (leaves → scalar) by rebuilding the record for every
/// perturbed evaluation.
pub fn finite_diff_check<T, F>(build: F, leaves: &[Tensor<T>], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::arg("finite_diff_check", "step must be positive"));
    }
    let eval = |values: &[Tensor<T>]| -> Result<(Tape<T>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(leaves)?;
    let value = scalar_of(&tape, out)?;
    let grads = tape.backward(out)?;

    let mut reports = Vec::with_capacity(leaves.len());
    let mut work = leaves.to_vec();
    for (li, var) in vars.iter().enumerate() {
        let mut numeric = Vec::with_capacity(leaves[li].len());
        for j in 0..leaves[li].len() {
            let orig = work[li].data()[j];
            work[li].data_mut()[j] = orig + T::of(step);
            let (t, _, o) = eval(&work)?;
            let plus = scalar_of(&t, o)?;
            work[li].data_mut()[j] = orig - T::of(step);
            let (t, _, o) = eval(&work)?;
            let minus = scalar_of(&t, o)?;
            work[li].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let analytic = grads.get(*var).expect("leaf requires grad");
        reports.push(compare(li, analytic, &numeric, value));
    }
    Ok(GradCheckReport {
        leaves: reports,
        tolerance,
    })
}

/// Checks an already-built record by replaying it with perturbed leaves.
/// Data-dependent choices and gradient stops recorded on the tape stay
/// fixed, so the check measures the derivative of the recorded sub-network
/// along its differentiable paths.
pub fn finite_diff_check_record<T: Scalar>(
    tape: &Tape<T>,
    loss: Var,
    leaves: &[Var],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(Error::arg("finite_diff_check", "step must be positive"));
    }
    let value = scalar_of(tape, loss)?;
    let grads = tape.backward(loss)?;
    let mut reports = Vec::with_capacity(leaves.len());
    for &leaf in leaves {
        let base = tape.value(leaf).clone();
        let mut work = base.clone();
        let mut numeric = Vec::with_capacity(base.len());
        for j in 0..base.len() {
            let orig = base.data()[j];
            work.data_mut()[j] = orig + T::of(step);
            let plus = scalar_of(&tape.replay_blocked(&[(leaf, &work)])?, loss)?;
            work.data_mut()[j] = orig - T::of(step);
            let minus = scalar_of(&tape.replay_blocked(&[(leaf, &work)])?, loss)?;
            work.data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * step));
        }
        let analytic = grads
            .get(leaf)
            .ok_or_else(|| Error::arg("finite_diff_check", format!("leaf {} does not require grad", leaf.index())))?;
        reports.push(compare(leaf.index(), analytic, &numeric, value));
    }
    Ok(GradCheckReport {
        leaves: reports,
        tolerance,
    })
}
