use rand::Rng;

use crate::diffcore::tape::{Gradients, Tape, Var};
use crate::diffcore::tensor::Tensor;
use crate::scalar::Scalar;

/// Index of a trainable array inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable arrays owned by a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Lazily registers parameters as tape leaves, so only the parameters a
/// forward pass actually touches enter the record.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Option<Var>>,
}

impl Binding {
    pub fn new<T: Scalar>(store: &ParamStore<T>) -> Self {
        Self {
            vars: vec![None; store.len()],
        }
    }

    pub fn bind<T: Scalar>(&mut self, tape: &mut Tape<T>, store: &ParamStore<T>, id: ParamId) -> Var {
        *self.vars[id.0].get_or_insert_with(|| tape.param(store.get(id).clone()))
    }

    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.vars[id.0]
    }

    /// Bound (parameter, leaf) pairs in parameter order.
    pub fn bound(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    /// Per-parameter gradients; `None` for parameters that never entered the
    /// record.
    pub fn collect<T: Scalar>(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|v| v.and_then(|v| grads.take(v))).collect()
    }
}

/// Uniform in ±sqrt(6/(fan_in+fan_out)), for a `[fan_in, fan_out]` weight.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(&[fan_in, fan_out], limit, rng)
}

pub fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-limit..=limit))).collect();
    Tensor::new(shape.to_vec(), data).expect("uniform shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_respects_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Tensor<f64> = glorot_uniform(10, 20, &mut rng);
        let lim = (6.0f64 / 30.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= lim));
        assert_eq!(w.shape(), &[10, 20]);
    }

    #[test]
    fn binding_registers_each_param_once() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::scalar(1.0));
        let b = store.add("b", Tensor::scalar(2.0));
        let mut tape = Tape::new();
        let mut binding = Binding::new(&store);
        let v1 = binding.bind(&mut tape, &store, a);
        let v2 = binding.bind(&mut tape, &store, a);
        assert_eq!(v1, v2);
        assert_eq!(tape.len(), 1);
        assert!(binding.var(b).is_none());
        let y = tape.mul(v1, v1).unwrap();
        let mut grads = tape.backward(y).unwrap();
        let g = binding.collect(&mut grads);
        assert_eq!(g[0].as_ref().unwrap().data(), &[2.0]);
        assert!(g[1].is_none());
    }
}
