use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::Tensor;

/// A learnable tensor together with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = value.zeros_like();
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(name, Tensor::zeros(shape)?))
    }

    /// He-normal initialization with standard deviation `sqrt(2 / fan_in)`.
    pub fn he_normal<R: Rng>(name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<Self> {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut t = Tensor::zeros(shape)?;
        t.data_mut().iter_mut().for_each(|v| *v = normal.sample(rng));
        Ok(Self::new(name, t))
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// A differentiable computation with cached forward state.
///
/// `backward` must follow a `forward` on the same instance. It returns the
/// gradient with respect to the forward input and adds (never assigns)
/// parameter gradients into the accumulators, so gradients reaching a
/// parameter along several paths sum. Accumulators are cleared only by
/// [`Module::zero_grad`].
pub trait Module {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor>;

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor>;

    /// Parameters in deterministic construction order.
    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

/// Sequential composition; backward runs the children in reverse.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Module + Send>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Module + Send + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Module for Sequential {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
