use crate::basis::{BasisSpec, LearnerKind};
use crate::diffcore::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One fully-connected layer `relu(x·W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Base learner: `M` ReLU layers producing its context, then two linear
/// heads producing backcast and forecast coefficients for its basis.
#[derive(Clone, Debug)]
pub struct BaseLearner<T> {
    pub kind: LearnerKind,
    pub spec: BasisSpec,
    pub layers: Vec<Dense>,
    /// `[D, backcast_dim]`.
    pub backcast_head: ParamId,
    /// `[D, forecast_dim]`.
    pub forecast_head: ParamId,
    /// Transposed bases (`coeffs × length`); `None` for generic learners.
    bases: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> BaseLearner<T> {
    pub fn new(spec: BasisSpec, layers: Vec<Dense>, backcast_head: ParamId, forecast_head: ParamId) -> Result<Self> {
        let bases = spec
            .matrices::<T>()?
            .map(|(b, f)| (b.transposed(), f.transposed()));
        Ok(Self {
            kind: spec.kind,
            spec,
            layers,
            backcast_head,
            forecast_head,
            bases,
        })
    }

    /// `[n, d_v] → [n, D]`.
    pub fn embed(&self, tape: &mut Tape<T>, binding: &mut Binding, store: &ParamStore<T>, input: Var) -> Result<Var> {
        let mut h = input;
        for layer in &self.layers {
            let w = binding.bind(tape, store, layer.weight);
            let b = binding.bind(tape, store, layer.bias);
            let z = tape.matmul(h, w)?;
            let z = tape.add_bias(z, b)?;
            h = tape.relu(z)?;
        }
        Ok(h)
    }

    /// `[n, D] → ([n, t], [n, H])`.
    pub fn predict(
        &self,
        tape: &mut Tape<T>,
        binding: &mut Binding,
        store: &ParamStore<T>,
        theta: Var,
    ) -> Result<(Var, Var)> {
        let hb = binding.bind(tape, store, self.backcast_head);
        let hf = binding.bind(tape, store, self.forecast_head);
        let theta_b = tape.matmul(theta, hb)?;
        let theta_f = tape.matmul(theta, hf)?;
        match &self.bases {
            None => Ok((theta_b, theta_f)),
            Some((back, fore)) => {
                let back = tape.constant(back.clone());
                let fore = tape.constant(fore.clone());
                Ok((tape.matmul(theta_b, back)?, tape.matmul(theta_f, fore)?))
            }
        }
    }

    /// Context of a single pooled input vector.
    pub fn embed_values(&self, store: &ParamStore<T>, input: &[T]) -> Result<Vec<T>> {
        let expected = store.get(self.layers[0].weight).shape()[0];
        if input.len() != expected {
            return Err(Error::shape("learner_embed", &[&[expected], &[input.len()]]));
        }
        let mut tape = Tape::new();
        let mut binding = Binding::new(store);
        let x = tape.constant(Tensor::new(vec![1, input.len()], input.to_vec())?);
        let h = self.embed(&mut tape, &mut binding, store, x)?;
        Ok(tape.value(h).data().to_vec())
    }

    /// Backcast and forecast of a single context vector.
    pub fn predict_values(&self, store: &ParamStore<T>, theta: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let expected = store.get(self.backcast_head).shape()[0];
        if theta.len() != expected {
            return Err(Error::shape("learner_predict", &[&[expected], &[theta.len()]]));
        }
        let mut tape = Tape::new();
        let mut binding = Binding::new(store);
        let x = tape.constant(Tensor::new(vec![1, theta.len()], theta.to_vec())?);
        let (b, f) = self.predict(&mut tape, &mut binding, store, x)?;
        Ok((tape.value(b).data().to_vec(), tape.value(f).data().to_vec()))
    }
}
