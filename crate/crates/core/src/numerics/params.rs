use std::collections::BTreeMap;

use rand::Rng;

use crate::numerics::{Tensor, TensorError};
use crate::scalar::Real;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor together with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
}

/// Owns every trainable tensor of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
    ) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        let grad = vec![T::zero(); value.numel()];
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad });
        Ok(id)
    }

    /// Registers a parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: impl Into<Vec<usize>>,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId, TensorError> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..n)
            .map(|_| T::lit(rng.gen_range(-bound..=bound)))
            .collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros([2])).unwrap();
        assert!(matches!(
            s.add("w", Tensor::zeros([2])),
            Err(TensorError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn uniform_init_respects_bound_and_seed() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = ParamStore::<f64>::new();
            let id = s.add_uniform("w", [4, 25], 25, &mut rng).unwrap();
            s.get(id).value.clone()
        };
        let a = draw(3);
        assert!(a.data().iter().all(|x| x.abs() <= 0.2));
        assert_eq!(a, draw(3));
        assert_ne!(a, draw(4));
    }
}
