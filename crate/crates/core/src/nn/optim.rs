use super::module::Param;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One SGD update with momentum and L2 weight decay:
/// `g' = g + wd·w; v = μ·v + g'; w = w − lr·v`.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::ShapeMismatch {
            op: "sgd step",
            left: param.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    for ((w, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut().iter_mut())
    {
        let g = g + weight_decay * *w;
        *v = momentum * *v + g;
        *w -= lr * *v;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Restores momentum buffers, e.g. from a checkpoint.
    pub fn set_velocity(&mut self, velocity: Vec<Tensor>) {
        self.velocity = velocity;
    }

    /// Updates every parameter in order. All gradients are validated before any
    /// parameter is touched, so a non-finite gradient leaves the model intact.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        for p in params.iter() {
            if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("gradient of {} (element {i} = {})", p.name, p.grad.data()[i]),
                });
            }
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| p.value.zeros_like()).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer holds {} velocity buffers for {} parameters",
                self.velocity.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            sgd_step(&mut p.value, &p.grad, v, self.lr, self.momentum, self.weight_decay)?;
        }
        Ok(())
    }
}
