//! Named parameters and classical-momentum SGD.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub momentum: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let momentum = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, momentum }
    }
}

/// Ordered parameter set with unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its slot.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.push(Parameter::new(name, value));
        self.index.insert(name.to_string(), self.params.len() - 1);
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn get(&self, slot: usize) -> &Parameter {
        &self.params[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Parameter {
        &mut self.params[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.slot(name).map(|s| &self.params[s])
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// One step of classical momentum SGD: `v ← μ·v + g`, `p ← p − lr·v`.
///
/// `grads` is indexed by parameter slot and must cover every parameter.
pub fn sgd_momentum_step(params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64, momentum: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        let g = g.as_ref().ok_or_else(|| Error::MissingGradient(p.name.clone()))?;
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!("gradient of {} has shape {:?}", p.name, g.shape())));
        }
        for ((v, m), &gv) in p.value.data_mut().iter_mut().zip(p.momentum.data_mut()).zip(g.data()) {
            let next = momentum * *m as f64 + gv as f64;
            *m = next as f32;
            *v = (*v as f64 - lr * next) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(value: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(value)).unwrap();
        s
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut s = store(1.0);
        sgd_momentum_step(&mut s, &[Some(Tensor::scalar(0.5))], 0.1, 0.0).unwrap();
        assert!((s.get(0).value.item() - 0.95).abs() < 1e-7);
    }

    #[test]
    fn two_momentum_steps_with_constant_gradient() {
        let (lr, g) = (0.1, 2.0f32);
        let mut s = store(0.0);
        for _ in 0..2 {
            sgd_momentum_step(&mut s, &[Some(Tensor::scalar(g))], lr, 0.9).unwrap();
        }
        let want = -(lr as f32) * g * (1.0 + 1.9);
        assert!((s.get(0).value.item() - want).abs() < 1e-6);
    }

    #[test]
    fn converges_on_one_dimensional_quadratic() {
        // f(x) = x², f'(x) = 2x
        let mut s = store(3.0);
        let mut steps = 0;
        while s.get(0).value.item().abs() >= 1e-4 {
            let g = 2.0 * s.get(0).value.item();
            sgd_momentum_step(&mut s, &[Some(Tensor::scalar(g))], 0.1, 0.9).unwrap();
            steps += 1;
            assert!(steps <= 200, "did not converge in 200 steps");
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store(1.0);
        assert!(matches!(sgd_momentum_step(&mut s, &[None], 0.1, 0.9), Err(Error::MissingGradient(_))));
    }

    #[test]
    fn duplicate_names_rejected_and_momentum_starts_at_zero() {
        let mut s = store(1.0);
        assert!(s.insert("x", Tensor::scalar(0.0)).is_err());
        assert_eq!(s.get(0).momentum.item(), 0.0);
    }
}
