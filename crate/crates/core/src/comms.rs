//! Sparse communication between the learners of one group.
//!
//! Each activated learner attends over the contexts of all `G` learners of
//! its group, itself and the inactive ones included, and adds the softened
//! read `α·c` to its own context. Keys and values coming from a learner
//! that is inactive on a given sample pass through a gradient stop, so the
//! loss never reaches an inactive learner through communication.

use rand::Rng;

use crate::diffcore::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct CommParams {
    /// `[D, d_c]` per learner.
    pub queries: Vec<ParamId>,
    /// `[D, d_c]` per learner.
    pub keys: Vec<ParamId>,
    /// `[D, D]` per learner.
    pub values: Vec<ParamId>,
    pub width: usize,
    pub alpha: f64,
    pub dropout: f64,
}

impl CommParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::arg("communicate", format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(
                "communicate",
                format!("dropout = {} outside [0, 1)", self.dropout),
            ));
        }
        Ok(())
    }
}

/// Keeps each of `learners` sources with probability `1 − rho`; the self
/// edge survives whenever every source would be dropped.
pub fn dropout_mask<R: Rng + ?Sized>(learners: usize, rho: f64, self_index: usize, rng: &mut R) -> Vec<bool> {
    let mut keep: Vec<bool> = (0..learners).map(|_| rng.gen::<f64>() >= rho).collect();
    if !keep.iter().any(|&k| k) {
        keep[self_index] = true;
    }
    keep
}

/// Stacks `G` arrays of `[B, w]` into `[B, G, w]`.
fn stack<T: Scalar>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    let mut reshaped = Vec::with_capacity(parts.len());
    for &p in parts {
        let s = tape.shape(p).to_vec();
        reshaped.push(tape.reshape(p, &[s[0], 1, s[1]])?);
    }
    tape.concat(&reshaped, 1)
}

/// Batched communication.
///
/// * `contexts` — `G` arrays `[B, D]`: the group's current contexts (fresh
///   embeddings on active rows, carried contexts elsewhere).
/// * `fresh` — per learner, the rows it is active on and its `[n_g, D]`
///   fresh embedding.
/// * `active` — `[G][B]` activation flags.
/// * `rngs` — per-sample generators; dropout applies only when given.
///
/// Returns the updated `[n_g, D]` contexts of every active learner.
#[allow(clippy::too_many_arguments)]
pub fn communicate<T: Scalar, R: Rng>(
    tape: &mut Tape<T>,
    binding: &mut Binding,
    store: &ParamStore<T>,
    params: &CommParams,
    contexts: &[Var],
    fresh: &[Option<(Vec<usize>, Var)>],
    active: &[Vec<bool>],
    mut rngs: Option<&mut [R]>,
) -> Result<Vec<Option<Var>>> {
    params.validate()?;
    let learners = contexts.len();
    if fresh.len() != learners || active.len() != learners || params.queries.len() != learners {
        return Err(Error::arg("communicate", "learner counts disagree"));
    }
    let width = tape.shape(contexts[0]).to_vec();
    for &c in contexts {
        if tape.shape(c) != width.as_slice() || width.len() != 2 {
            return Err(Error::shape("communicate", &[&width, tape.shape(c)]));
        }
    }
    let batch = width[0];

    let mut keys = Vec::with_capacity(learners);
    let mut values = Vec::with_capacity(learners);
    for h in 0..learners {
        let wk = binding.bind(tape, store, params.keys[h]);
        let wv = binding.bind(tape, store, params.values[h]);
        let k = tape.matmul(contexts[h], wk)?;
        let v = tape.matmul(contexts[h], wv)?;
        keys.push(block_inactive(tape, k, &active[h])?);
        values.push(block_inactive(tape, v, &active[h])?);
    }
    let keys = stack(tape, &keys)?;
    let values = stack(tape, &values)?;
    let keys_t = tape.transpose(keys)?;

    let inv_sqrt = T::one() / T::of(params.width as f64).sqrt();
    let alpha = T::of(params.alpha);
    let mut out = Vec::with_capacity(learners);
    for (g, f) in fresh.iter().enumerate() {
        let Some((rows, theta)) = f else {
            out.push(None);
            continue;
        };
        let n = rows.len();
        let wq = binding.bind(tape, store, params.queries[g]);
        let q = tape.matmul(*theta, wq)?;
        let q = tape.reshape(q, &[n, 1, params.width])?;
        let k = tape.gather_rows(keys_t, rows)?;
        let logits = tape.batch_matmul(q, k)?;
        let logits = tape.scale(logits, inv_sqrt)?;
        let weights = match rngs.as_deref_mut() {
            Some(rngs) if params.dropout > 0.0 => {
                let mut keep = Vec::with_capacity(n * learners);
                for &b in rows {
                    keep.extend(dropout_mask(learners, params.dropout, g, &mut rngs[b]));
                }
                tape.softmax_masked(logits, keep)?
            }
            _ => tape.softmax(logits)?,
        };
        let v = tape.gather_rows(values, rows)?;
        let read = tape.batch_matmul(weights, v)?;
        let read = tape.reshape(read, &[n, width[1]])?;
        let read = tape.scale(read, alpha)?;
        out.push(Some(tape.add(*theta, read)?));
    }
    debug_assert!(active.iter().all(|a| a.len() == batch));
    Ok(out)
}

fn block_inactive<T: Scalar>(tape: &mut Tape<T>, x: Var, active: &[bool]) -> Result<Var> {
    if active.iter().all(|&a| a) {
        return Ok(x);
    }
    let stopped = tape.stop_gradient(x)?;
    if active.iter().all(|&a| !a) {
        return Ok(stopped);
    }
    tape.where_rows(active, x, stopped)
}

/// Single-sample communication over plain context vectors.
pub fn communicate_contexts<T: Scalar, R: Rng>(
    store: &ParamStore<T>,
    params: &CommParams,
    contexts: &[Vec<T>],
    activated: &[usize],
    rng: Option<&mut R>,
) -> Result<Vec<Vec<T>>> {
    let mut tape = Tape::new();
    let mut binding = Binding::new(store);
    let d = contexts.first().map(Vec::len).unwrap_or(0);
    let mut vars = Vec::with_capacity(contexts.len());
    for c in contexts {
        if c.len() != d {
            return Err(Error::shape("communicate", &[&[d], &[c.len()]]));
        }
        vars.push(tape.constant(Tensor::new(vec![1, d], c.clone())?));
    }
    let active: Vec<Vec<bool>> = (0..contexts.len()).map(|g| vec![activated.contains(&g)]).collect();
    let fresh: Vec<Option<(Vec<usize>, Var)>> = (0..contexts.len())
        .map(|g| activated.contains(&g).then(|| (vec![0], vars[g])))
        .collect();
    let mut rngs: Option<Vec<&mut R>> = rng.map(|r| vec![r]);
    let updated = match rngs.as_deref_mut() {
        Some(r) => communicate(&mut tape, &mut binding, store, params, &vars, &fresh, &active, Some(r))?,
        None => communicate::<T, &mut R>(&mut tape, &mut binding, store, params, &vars, &fresh, &active, None)?,
    };
    Ok(contexts
        .iter()
        .zip(updated)
        .map(|(c, u)| match u {
            Some(v) => tape.value(v).data().to_vec(),
            None => c.clone(),
        })
        .collect())
}
