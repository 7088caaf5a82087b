use super::module::{Module, Param};
use crate::error::{Error, Result};
use crate::instrument;
use crate::tensor::Tensor;

/// Max-pooling result: values plus the flat input offset of every winner.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub values: Tensor,
    pub argmax: Vec<usize>,
}

/// Max pooling over the trailing `window.len()` axes of `[N, C, spatial...]`.
///
/// Windows are scanned in increasing flat input order and only a strictly
/// larger value replaces the incumbent, so ties go to the lowest flat index.
pub fn maxpool(input: &Tensor, window: &[usize], stride: &[usize]) -> Result<Pooled> {
    let rank = window.len();
    if rank == 0 || rank > 3 || stride.len() != rank || input.ndim() != rank + 2 {
        return Err(Error::Shape(format!(
            "maxpool window {window:?} / stride {stride:?} incompatible with input {:?}",
            input.shape()
        )));
    }
    if window.contains(&0) || stride.contains(&0) {
        return Err(Error::Shape("maxpool window and stride must be positive".into()));
    }
    let lead = 3 - rank;
    let mut dims = [1usize; 3];
    let mut win = [1usize; 3];
    let mut st = [1usize; 3];
    dims[lead..].copy_from_slice(&input.shape()[2..2 + rank]);
    win[lead..].copy_from_slice(&window[..rank]);
    st[lead..].copy_from_slice(&stride[..rank]);
    let mut out = [0usize; 3];
    for a in 0..3 {
        if win[a] > dims[a] {
            return Err(Error::Shape(format!(
                "maxpool window {window:?} larger than input {:?}",
                input.shape()
            )));
        }
        out[a] = (dims[a] - win[a]) / st[a] + 1;
    }
    let planes = input.shape()[0] * input.shape()[1];
    let (ivol, ovol) = (dims.iter().product::<usize>(), out.iter().product::<usize>());
    let x = input.data();
    let mut values = Vec::with_capacity(planes * ovol);
    let mut argmax = Vec::with_capacity(planes * ovol);
    for p in 0..planes {
        let base = p * ivol;
        for od in 0..out[0] {
            for oh in 0..out[1] {
                for ow in 0..out[2] {
                    let mut best_i = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for kd in 0..win[0] {
                        for kh in 0..win[1] {
                            for kw in 0..win[2] {
                                let i =
                                    base + ((od * st[0] + kd) * dims[1] + oh * st[1] + kh) * dims[2] + ow * st[2] + kw;
                                if best_i == usize::MAX || x[i] > best_v {
                                    best_i = i;
                                    best_v = x[i];
                                }
                            }
                        }
                    }
                    values.push(best_v);
                    argmax.push(best_i);
                }
            }
        }
    }
    let mut shape = input.shape()[..2].to_vec();
    shape.extend_from_slice(&out[lead..]);
    instrument::tally_elementwise(values.len());
    if instrument::recording_branches() {
        instrument::record_branches(argmax.iter().map(|&i| i as u64));
    }
    Ok(Pooled {
        values: Tensor::from_vec(&shape, values)?,
        argmax,
    })
}

/// Routes each output gradient to its window winner.
pub fn maxpool_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::Shape(format!(
            "maxpool backward: {} winners for {} gradients",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut g = Tensor::zeros(input_shape)?;
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(grad_out.data()) {
        gd[i] += v;
    }
    Ok(g)
}

pub struct MaxPool {
    window: Vec<usize>,
    stride: Vec<usize>,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool {
    pub fn new(window: &[usize], stride: &[usize]) -> Self {
        Self {
            window: window.to_vec(),
            stride: stride.to_vec(),
            cache: None,
        }
    }

    /// Window 2, stride 2 on each of `rank` spatial axes.
    pub fn halving(rank: usize) -> Self {
        Self::new(&vec![2; rank], &vec![2; rank])
    }
}

impl Module for MaxPool {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let pooled = maxpool(x, &self.window, &self.stride)?;
        self.cache = Some((x.shape().to_vec(), pooled.argmax));
        Ok(pooled.values)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, argmax) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("maxpool: backward before forward".into()))?;
        maxpool_backward(shape, argmax, grad_out)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}
