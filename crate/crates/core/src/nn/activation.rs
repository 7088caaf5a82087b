use serde::{Deserialize, Serialize};

use super::module::{Module, Param};
use crate::error::{Error, Result};
use crate::instrument;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// Disables the nonlinearity; used to expose the linear structure of blocks.
    Identity,
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data).expect("shape preserved")
}

/// Passes `grad` where `x > 0`, zero elsewhere (including `x == 0`).
pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if x.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            op: "relu backward",
            left: x.shape().to_vec(),
            right: grad.shape().to_vec(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Activation layer; the identity variant is a no-op that still counts as a layer.
pub struct Act {
    kind: Activation,
    cached: Option<Tensor>,
}

impl Act {
    pub fn new(kind: Activation) -> Self {
        Self { kind, cached: None }
    }

    pub fn kind(&self) -> Activation {
        self.kind
    }
}

impl Module for Act {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match self.kind {
            Activation::Identity => {
                self.cached = Some(Tensor::zeros(&[1])?);
                Ok(x.clone())
            }
            Activation::Relu => {
                instrument::tally_elementwise(x.len());
                if instrument::recording_branches() {
                    let bits = x.data().chunks(64).map(|chunk| {
                        chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (k, &v)| acc | (((v > 0.0) as u64) << k))
                    });
                    instrument::record_branches(bits);
                }
                self.cached = Some(x.clone());
                Ok(relu(x))
            }
        }
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .cached
            .as_ref()
            .ok_or_else(|| Error::State("activation: backward before forward".into()))?;
        match self.kind {
            Activation::Identity => Ok(grad_out.clone()),
            Activation::Relu => relu_backward(x, grad_out),
        }
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::from_vec(&[2], vec![0.5, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
        let g = relu_backward(&x, &Tensor::new(&[3], 1.0).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn identity_passes_through() {
        let mut act = Act::new(Activation::Identity);
        let x = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(act.forward(&x).unwrap(), x);
        assert_eq!(act.backward(&x).unwrap(), x);
    }

    #[test]
    fn backward_requires_forward() {
        let mut act = Act::new(Activation::Relu);
        assert!(act.backward(&Tensor::zeros(&[1]).unwrap()).is_err());
    }
}
