use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::graph::{Gradients, Graph};
use crate::{Result, Scalar, Tensor, TensorError};

/// A named learned tensor with its gradient accumulator and Adam moments.
#[derive(Clone, Debug)]
pub struct Parameter<S> {
    pub value: Tensor<S>,
    pub requires_grad: bool,
    grad: Option<Tensor<S>>,
    m: Tensor<S>,
    v: Tensor<S>,
    step: u64,
}

impl<S: Scalar> Parameter<S> {
    fn new(value: Tensor<S>) -> Self {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        Self {
            value,
            requires_grad: true,
            grad: None,
            m,
            v,
            step: 0,
        }
    }

    pub fn grad(&self) -> Option<&Tensor<S>> {
        self.grad.as_ref()
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameters, iterated in name order.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<S> {
    params: BTreeMap<String, Parameter<S>>,
}

pub fn xavier_uniform<S: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    let data = (0..rows * cols).map(|_| S::of(dist.sample(rng))).collect();
    Tensor::new(&[rows, cols], data).expect("shape")
}

pub fn normal<S: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor<S> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..rows * cols).map(|_| S::of(dist.sample(rng))).collect();
    Tensor::new(&[rows, cols], data).expect("shape")
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        self.params.insert(name.to_string(), Parameter::new(value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<S>> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<S>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    /// Mutable access to a value. Optimizer state is left untouched.
    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn set_requires_grad(&mut self, name: &str, flag: bool) -> Result<()> {
        self.params
            .get_mut(name)
            .map(|p| p.requires_grad = flag)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn bytes(&self) -> usize {
        self.params.values().map(|p| p.value.bytes()).sum()
    }

    /// Adds the gradients of every parameter bound on `graph`.
    pub fn accumulate(&mut self, graph: &Graph<S>, grads: &Gradients<S>) {
        for (name, id) in graph.bound_params() {
            let Some(g) = grads.get_by_id(id) else { continue };
            let p = self.params.get_mut(&name).expect("bound parameter exists");
            match &mut p.grad {
                Some(acc) => acc.add_assign(g),
                slot @ None => *slot = Some(g.clone()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// One Adam update of every parameter holding a gradient; gradients are cleared.
    ///
    /// A NaN in any gradient aborts before anything is modified.
    pub fn adam_step(&mut self, cfg: &Adam) -> Result<()> {
        for (name, p) in &self.params {
            if p.grad.as_ref().is_some_and(Tensor::has_nan) {
                return Err(TensorError::NanGradient(name.clone()));
            }
        }
        let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
        let (lr, eps) = (S::of(cfg.lr), S::of(cfg.eps));
        let one = S::one();
        for p in self.params.values_mut() {
            let Some(g) = p.grad.take() else { continue };
            if !p.requires_grad {
                continue;
            }
            p.step += 1;
            let t = p.step as i32;
            let bc1 = one - b1.powi(t);
            let bc2 = one - b2.powi(t);
            let value = p.value.data_mut();
            let (m, v) = (p.m.data_mut(), p.v.data_mut());
            for i in 0..value.len() {
                m[i] = b1 * m[i] + (one - b1) * g.data()[i];
                v[i] = b2 * v[i] + (one - b2) * g.data()[i] * g.data()[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                value[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_and_unknown_names() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("w", Tensor::zeros(&[1, 1])).unwrap();
        assert_eq!(
            s.insert("w", Tensor::zeros(&[1, 1])),
            Err(TensorError::DuplicateParameter("w".into()))
        );
        assert!(matches!(s.value("x"), Err(TensorError::UnknownParameter(_))));
    }

    #[test]
    fn xavier_bounds() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let w = xavier_uniform::<f64>(10, 20, &mut rng);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
    }
}
