//! Recurrent input competition.
//!
//! The group input is split into `t` tokens `(value, position)` plus an
//! all-zero null token. Every learner queries these tokens with its context
//! from the previous group; the attention mass it places on real tokens
//! (one minus the null weight) is its relevance. The `k` most relevant
//! learners are activated and receive their attention-pooled values as
//! input; the others never touch the input.

use crate::diffcore::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Width of one input token: `(value, position)`.
pub const TOKEN_WIDTH: usize = 2;

/// Projection parameters of one group's competition.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingParams {
    /// `[2, d_k]`, shared by all learners.
    pub key: ParamId,
    /// `[2, d_v]`, shared by all learners.
    pub value: ParamId,
    /// One `[D, d_k]` query projection per learner.
    pub queries: Vec<ParamId>,
    pub key_width: usize,
    pub value_width: usize,
}

/// Token matrix of one window: `t` real rows then the null row.
#[derive(Clone, Debug, PartialEq)]
pub struct InputTokens<T> {
    pub tokens: Tensor<T>,
}

impl<T: Scalar> InputTokens<T> {
    pub fn count(&self) -> usize {
        self.tokens.rows()
    }
}

pub fn tokenize_window<T: Scalar>(x: &[T]) -> Result<InputTokens<T>> {
    if x.is_empty() {
        return Err(Error::arg("tokenize_window", "empty input window"));
    }
    let t = x.len();
    let mut data = Vec::with_capacity((t + 1) * TOKEN_WIDTH);
    for (i, &v) in x.iter().enumerate() {
        data.push(v);
        data.push(T::of(i as f64 / t as f64));
    }
    data.extend([T::zero(), T::zero()]);
    Ok(InputTokens {
        tokens: Tensor::new(vec![t + 1, TOKEN_WIDTH], data)?,
    })
}

/// Indices of the `k` largest relevances, ties going to the lower index;
/// returned in ascending index order.
pub fn select_topk<T: Scalar>(relevances: &[T], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > relevances.len() {
        return Err(Error::arg(
            "select_topk",
            format!("k = {k} outside 1..={}", relevances.len()),
        ));
    }
    let mut order: Vec<usize> = (0..relevances.len()).collect();
    order.sort_by(|&a, &b| {
        relevances[b]
            .partial_cmp(&relevances[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Outcome of the competition over a batch.
#[derive(Clone, Debug)]
pub struct Competition<T> {
    /// `[B][G]` relevance scores in `[0, 1]`.
    pub relevance: Vec<Vec<T>>,
    /// `[B]` activated learner sets, ascending.
    pub activated: Vec<Vec<usize>>,
    /// Per learner: the batch rows it won and its pooled input `[n_g, d_v]`.
    pub pooled: Vec<Option<(Vec<usize>, Var)>>,
}

impl<T> Competition<T> {
    /// `[G][B]` activation flags.
    pub fn masks(&self, learners: usize) -> Vec<Vec<bool>> {
        let batch = self.activated.len();
        let mut masks = vec![vec![false; batch]; learners];
        for (b, set) in self.activated.iter().enumerate() {
            for &g in set {
                masks[g][b] = true;
            }
        }
        masks
    }
}

/// Position column `i/t` for every real token of every row.
fn positions<T: Scalar>(batch: usize, t: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(batch * t);
    for _ in 0..batch {
        data.extend((0..t).map(|i| T::of(i as f64 / t as f64)));
    }
    Tensor::new(vec![batch, t, 1], data).expect("positions")
}

/// Runs the competition for a batch of group inputs `x` (`[B, t]`) given
/// the previous contexts (`G` arrays of `[B, D]`).
pub fn compete<T: Scalar>(
    tape: &mut Tape<T>,
    binding: &mut Binding,
    store: &ParamStore<T>,
    params: &GatingParams,
    x: Var,
    contexts: &[Var],
    k: usize,
) -> Result<Competition<T>> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("input_attention", &[&shape]));
    }
    let (batch, t) = (shape[0], shape[1]);
    if contexts.len() != params.queries.len() {
        return Err(Error::arg(
            "input_attention",
            format!("{} contexts for {} learners", contexts.len(), params.queries.len()),
        ));
    }
    let (dk, dv) = (params.key_width, params.value_width);

    let values = tape.reshape(x, &[batch, t, 1])?;
    let pos = tape.constant(positions(batch, t));
    let real = tape.concat(&[values, pos], 2)?;
    let null = tape.constant(Tensor::zeros(vec![batch, 1, TOKEN_WIDTH]));
    let tokens = tape.concat(&[real, null], 1)?;
    let flat = tape.reshape(tokens, &[batch * (t + 1), TOKEN_WIDTH])?;

    let wk = binding.bind(tape, store, params.key);
    let keys = tape.matmul(flat, wk)?;
    let keys = tape.reshape(keys, &[batch, t + 1, dk])?;
    let keys_t = tape.transpose(keys)?;

    let inv_sqrt = T::one() / T::of(dk as f64).sqrt();
    let mut relevance = vec![Vec::with_capacity(contexts.len()); batch];
    let mut weights = Vec::with_capacity(contexts.len());
    for (g, &ctx) in contexts.iter().enumerate() {
        let wq = binding.bind(tape, store, params.queries[g]);
        let q = tape.matmul(ctx, wq).map_err(|_| {
            Error::shape("input_attention", &[tape.shape(ctx), store.get(params.queries[g]).shape()])
        })?;
        let q = tape.reshape(q, &[batch, 1, dk])?;
        let logits = tape.batch_matmul(q, keys_t)?;
        let logits = tape.scale(logits, inv_sqrt)?;
        let w = tape.softmax(logits)?;
        let wv = tape.value(w);
        for (b, rel) in relevance.iter_mut().enumerate() {
            rel.push(T::one() - wv.data()[b * (t + 1) + t]);
        }
        weights.push(w);
    }

    let activated = relevance
        .iter()
        .map(|r| select_topk(r, k))
        .collect::<Result<Vec<_>>>()?;

    let mut rows_of = vec![Vec::new(); contexts.len()];
    for (b, set) in activated.iter().enumerate() {
        for &g in set {
            rows_of[g].push(b);
        }
    }

    let mut value_tokens = None;
    let mut pooled = Vec::with_capacity(contexts.len());
    for (g, rows) in rows_of.into_iter().enumerate() {
        if rows.is_empty() {
            pooled.push(None);
            continue;
        }
        let v = match value_tokens {
            Some(v) => v,
            None => {
                let wv = binding.bind(tape, store, params.value);
                let v = tape.matmul(flat, wv)?;
                let v = tape.reshape(v, &[batch, t + 1, dv])?;
                value_tokens = Some(v);
                v
            }
        };
        let w = tape.gather_rows(weights[g], &rows)?;
        let v = tape.gather_rows(v, &rows)?;
        let p = tape.batch_matmul(w, v)?;
        let p = tape.reshape(p, &[rows.len(), dv])?;
        pooled.push(Some((rows, p)));
    }

    Ok(Competition {
        relevance,
        activated,
        pooled,
    })
}

/// Single-window attention for learner `g`: pooled input and relevance.
pub fn input_attention<T: Scalar>(
    store: &ParamStore<T>,
    params: &GatingParams,
    learner: usize,
    context: &[T],
    tokens: &InputTokens<T>,
) -> Result<(Vec<T>, T)> {
    let t = tokens.count() - 1;
    let wq = store.get(params.queries[learner]);
    if wq.shape()[0] != context.len() {
        return Err(Error::shape("input_attention", &[wq.shape(), &[context.len()]]));
    }
    let mut tape = Tape::new();
    let mut binding = Binding::new(store);
    let x: Vec<T> = (0..t).map(|i| tokens.tokens.at(i, 0)).collect();
    let x = tape.constant(Tensor::new(vec![1, t], x)?);
    let ctx = tape.constant(Tensor::new(vec![1, context.len()], context.to_vec())?);
    // every learner queries with the same context; only `learner` is read back
    let contexts = vec![ctx; params.queries.len()];
    let k = params.queries.len();
    let comp = compete(&mut tape, &mut binding, store, params, x, &contexts, k)?;
    let (_, pooled) = comp.pooled[learner].clone().expect("k = G activates every learner");
    Ok((tape.value(pooled).data().to_vec(), comp.relevance[0][learner]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_1x1(store: &mut ParamStore<f64>, wq: f64, wk: [f64; 2], wv: [f64; 2]) -> GatingParams {
        let key = store.add("wk", Tensor::new(vec![2, 1], wk.to_vec()).unwrap());
        let value = store.add("wv", Tensor::new(vec![2, 1], wv.to_vec()).unwrap());
        let q = store.add("wq", Tensor::new(vec![1, 1], vec![wq]).unwrap());
        GatingParams {
            key,
            value,
            queries: vec![q],
            key_width: 1,
            value_width: 1,
        }
    }

    #[test]
    fn tokens_carry_value_and_position() {
        let tk = tokenize_window(&[7.0f64]).unwrap();
        assert_eq!(tk.tokens.data(), &[7.0, 0.0, 0.0, 0.0]);
        let tk = tokenize_window(&[1.0f64, 2.0]).unwrap();
        assert_eq!(tk.tokens.data(), &[1.0, 0.0, 2.0, 0.5, 0.0, 0.0]);
        assert_eq!(tokenize_window(&[0.0f64; 12]).unwrap().count(), 13);
        assert!(tokenize_window::<f64>(&[]).is_err());
    }

    #[test]
    fn topk_examples() {
        assert_eq!(select_topk(&[0.5, 0.3, 0.2], 2).unwrap(), vec![0, 1]);
        assert_eq!(select_topk(&[0.4, 0.4, 0.1], 1).unwrap(), vec![0]);
        assert_eq!(select_topk(&[0.1, 0.9, 0.5], 3).unwrap(), vec![0, 1, 2]);
        assert!(select_topk(&[0.1, 0.2], 0).is_err());
        assert!(select_topk(&[0.1, 0.2], 3).is_err());
    }

    #[test]
    fn zero_projections_give_uniform_weights() {
        let mut store = ParamStore::new();
        let p = params_1x1(&mut store, 0.0, [0.0, 0.0], [0.0, 0.0]);
        let tk = tokenize_window(&[3.0, -1.0, 2.0]).unwrap();
        let (pooled, rel) = input_attention(&store, &p, 0, &[1.0], &tk).unwrap();
        assert!((rel - 0.75).abs() < 1e-15);
        assert_eq!(pooled, vec![0.0]);
    }

    #[test]
    fn saturated_query_drives_relevance_to_one() {
        let mut store = ParamStore::new();
        let p = params_1x1(&mut store, 1e3, [1.0, 0.0], [1.0, 0.0]);
        let tk = tokenize_window(&[1.0, 1.0]).unwrap();
        let (_, rel) = input_attention(&store, &p, 0, &[1.0], &tk).unwrap();
        assert!(rel > 1.0 - 1e-12);
    }

    #[test]
    fn two_token_hand_trace() {
        // x = [1, 2], tokens (1, 0), (2, 0.5), (0, 0)
        // keys = token·[0.5, 1] = 0.5, 1.5, 0 ; query = 2·1 = 2 ; d_k = 1
        // logits = 1, 3, 0 ; values = token·[1, -2] = 1, 1, 0
        let mut store = ParamStore::new();
        let p = params_1x1(&mut store, 1.0, [0.5, 1.0], [1.0, -2.0]);
        let tk = tokenize_window(&[1.0, 2.0]).unwrap();
        let (pooled, rel) = input_attention(&store, &p, 0, &[2.0], &tk).unwrap();
        let z = 1f64.exp() + 3f64.exp() + 1.0;
        let (w0, w1, w2) = (1f64.exp() / z, 3f64.exp() / z, 1.0 / z);
        assert!((rel - (1.0 - w2)).abs() < 1e-15);
        assert!((pooled[0] - (w0 * 1.0 + w1 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn context_width_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let p = params_1x1(&mut store, 1.0, [1.0, 1.0], [1.0, 1.0]);
        let tk = tokenize_window(&[1.0, 2.0]).unwrap();
        assert!(input_attention(&store, &p, 0, &[1.0, 2.0], &tk).is_err());
    }
}
