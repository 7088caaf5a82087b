//! Direct 2D/3D cross-correlation with zero padding, stride and dilation.
//!
//! Both ranks share one kernel over three spatial axes; a 2D convolution is a
//! 3D convolution with a depth-1 input and a depth-1 kernel. Tensors are laid
//! out as `[N, C, D, H, W]` (3D) or `[N, C, H, W]` (2D), weights as
//! `[C_out, C_in, k...]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::module::{Module, Param};
use crate::error::{Error, Result};
use crate::instrument;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    /// 2 or 3. For rank 2 the leading entry of every per-axis array is 1/0.
    pub rank: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub dilation: [usize; 3],
    pub padding: [usize; 3],
    pub bias: bool,
}

impl ConvSpec {
    pub fn new3d(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        Self {
            rank: 3,
            in_channels,
            out_channels,
            kernel,
            stride: [1; 3],
            dilation: [1; 3],
            padding: [0; 3],
            bias: false,
        }
    }

    pub fn new2d(in_channels: usize, out_channels: usize, kernel: [usize; 2]) -> Self {
        Self {
            rank: 2,
            kernel: [1, kernel[0], kernel[1]],
            ..Self::new3d(in_channels, out_channels, [1; 3])
        }
    }

    pub fn pointwise3d(in_channels: usize, out_channels: usize) -> Self {
        Self::new3d(in_channels, out_channels, [1; 3])
    }

    pub fn pointwise2d(in_channels: usize, out_channels: usize) -> Self {
        Self::new2d(in_channels, out_channels, [1, 1])
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = self.lift(stride, 1);
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    /// Dilation `d` on every axis with "same" padding `d·(k−1)/2`.
    pub fn same(mut self, dilation: usize) -> Self {
        self.dilation = self.lift(dilation, 1);
        for a in 0..3 {
            self.padding[a] = self.dilation[a] * (self.kernel[a] - 1) / 2;
        }
        self
    }

    fn lift(&self, v: usize, fixed: usize) -> [usize; 3] {
        if self.rank == 2 {
            [fixed, v, v]
        } else {
            [v; 3]
        }
    }

    /// Kernel extents for the spec's rank (2 or 3 entries).
    pub fn kernel_dims(&self) -> &[usize] {
        &self.kernel[3 - self.rank..]
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend_from_slice(self.kernel_dims());
        s
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_volume()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.bias { self.out_channels } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank != 2 && self.rank != 3 {
            return Err(Error::Config(format!("convolution rank {} unsupported", self.rank)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("convolution channels must be positive".into()));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) || self.dilation.contains(&0) {
            return Err(Error::Config(format!(
                "kernel, stride and dilation must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Output spatial extents over the three internal axes.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = self.dilation[a] * (self.kernel[a] - 1) + 1;
            let padded = input[a] + 2 * self.padding[a];
            if padded < span {
                return Err(Error::Shape(format!(
                    "convolution output would be empty on axis {a}: input {} padded to {padded}, kernel span {span}",
                    input[a]
                )));
            }
            out[a] = (padded - span) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Output tensor shape for an input tensor shape of this spec's rank.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (n, c, spatial) = self.split_input(input)?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let out = self.output_dims(spatial)?;
        let mut shape = vec![n, self.out_channels];
        shape.extend_from_slice(&out[3 - self.rank..]);
        Ok(shape)
    }

    fn split_input(&self, input: &[usize]) -> Result<(usize, usize, [usize; 3])> {
        if input.len() != self.rank + 2 {
            return Err(Error::Shape(format!(
                "rank-{} convolution needs a rank-{} input, got {:?}",
                self.rank,
                self.rank + 2,
                input
            )));
        }
        let spatial = if self.rank == 2 {
            [1, input[2], input[3]]
        } else {
            [input[2], input[3], input[4]]
        };
        Ok((input[0], input[1], spatial))
    }
}

struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    offsets_per_tap: [Vec<isize>; 3],
}

impl Geometry {
    fn new(spec: &ConvSpec, input_shape: &[usize]) -> Result<Self> {
        spec.validate()?;
        let (batch, cin, input) = spec.split_input(input_shape)?;
        if cin != spec.in_channels {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {cin}",
                spec.in_channels
            )));
        }
        let output = spec.output_dims(input)?;
        let offsets_per_tap = std::array::from_fn(|a| {
            (0..spec.kernel[a])
                .map(|k| (k * spec.dilation[a]) as isize - spec.padding[a] as isize)
                .collect()
        });
        Ok(Self {
            batch,
            cin,
            cout: spec.out_channels,
            input,
            output,
            kernel: spec.kernel,
            stride: spec.stride,
            offsets_per_tap,
        })
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Output positions `o` with `0 <= o*stride + off < input` on axis `a`.
    fn valid(&self, a: usize, off: isize) -> std::ops::Range<usize> {
        let s = self.stride[a] as isize;
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let last = self.input[a] as isize - 1 - off;
        let hi = if last < 0 {
            0
        } else {
            (last / s + 1).min(self.output[a] as isize)
        };
        let lo = lo.min(hi);
        lo as usize..hi as usize
    }

    /// Calls `f(out_offset, in_offset)` for every output position whose
    /// input tap for kernel tap `t` lies inside the unpadded input.
    #[inline(always)]
    fn for_each_pair<F: FnMut(usize, usize)>(&self, t: [usize; 3], mut f: F) {
        let off = [
            self.offsets_per_tap[0][t[0]],
            self.offsets_per_tap[1][t[1]],
            self.offsets_per_tap[2][t[2]],
        ];
        let r0 = self.valid(0, off[0]);
        let r1 = self.valid(1, off[1]);
        let r2 = self.valid(2, off[2]);
        if r2.is_empty() {
            return;
        }
        let [_, o1, o2] = self.output;
        let [_, i1, i2] = self.input;
        let [s0, s1, s2] = self.stride;
        for od in r0 {
            let id = (od * s0) as isize + off[0];
            for oh in r1.clone() {
                let ih = (oh * s1) as isize + off[1];
                let ob = (od * o1 + oh) * o2;
                let ib = ((id as usize * i1 + ih as usize) * i2) as isize + off[2];
                for ow in r2.clone() {
                    f(ob + ow, (ib + (ow * s2) as isize) as usize);
                }
            }
        }
    }

    fn tap(&self, t: usize) -> [usize; 3] {
        let [_, k1, k2] = self.kernel;
        [t / (k1 * k2), (t / k2) % k1, t % k2]
    }
}

fn check_weights(spec: &ConvSpec, weights: &Tensor, bias: Option<&Tensor>) -> Result<()> {
    if weights.shape() != spec.weight_shape().as_slice() {
        return Err(Error::ShapeMismatch {
            op: "convolution weights",
            left: weights.shape().to_vec(),
            right: spec.weight_shape(),
        });
    }
    match (spec.bias, bias) {
        (true, Some(b)) if b.shape() == [spec.out_channels] => Ok(()),
        (true, Some(b)) => Err(Error::ShapeMismatch {
            op: "convolution bias",
            left: b.shape().to_vec(),
            right: vec![spec.out_channels],
        }),
        (true, None) => Err(Error::Shape("convolution spec requires a bias tensor".into())),
        (false, Some(_)) => Err(Error::Shape("convolution spec has no bias but one was given".into())),
        (false, None) => Ok(()),
    }
}

/// Forward cross-correlation. Works for both ranks; see [`ConvSpec::rank`].
pub fn conv_forward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let g = Geometry::new(spec, input.shape())?;
    check_weights(spec, weights, bias)?;
    let out_shape = spec.output_shape(input.shape())?;
    let data = if instrument::counting() {
        forward_reference(&g, input.data(), weights.data(), bias.map(|b| b.data()))
    } else {
        forward_direct(&g, input.data(), weights.data(), bias.map(|b| b.data()))
    };
    Tensor::from_vec(&out_shape, data)
}

fn forward_direct(g: &Geometry, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let (ivol, ovol, taps) = (g.in_vol(), g.out_vol(), g.taps());
    let mut y = vec![0.0; g.batch * g.cout * ovol];
    for n in 0..g.batch {
        for co in 0..g.cout {
            let out = &mut y[(n * g.cout + co) * ovol..][..ovol];
            for ci in 0..g.cin {
                let xin = &x[(n * g.cin + ci) * ivol..][..ivol];
                let wk = &w[(co * g.cin + ci) * taps..][..taps];
                for (t, &wv) in wk.iter().enumerate() {
                    g.for_each_pair(g.tap(t), |o, i| out[o] += wv * xin[i]);
                }
            }
            if let Some(b) = b {
                out.iter_mut().for_each(|v| *v += b[co]);
            }
        }
    }
    y
}

/// Visits every tap of every output element, padding included, and reports
/// each multiply and accumulate to the operation counter.
fn forward_reference(g: &Geometry, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let (ivol, ovol, taps) = (g.in_vol(), g.out_vol(), g.taps());
    let mut y = vec![0.0; g.batch * g.cout * ovol];
    let (mut mults, mut adds) = (0u64, 0u64);
    for n in 0..g.batch {
        for co in 0..g.cout {
            for o in 0..ovol {
                let od = o / (g.output[1] * g.output[2]);
                let oh = (o / g.output[2]) % g.output[1];
                let ow = o % g.output[2];
                let mut acc = 0.0;
                for ci in 0..g.cin {
                    for t in 0..taps {
                        let k = g.tap(t);
                        let pos = [
                            (od * g.stride[0]) as isize + g.offsets_per_tap[0][k[0]],
                            (oh * g.stride[1]) as isize + g.offsets_per_tap[1][k[1]],
                            (ow * g.stride[2]) as isize + g.offsets_per_tap[2][k[2]],
                        ];
                        let inside = (0..3).all(|a| pos[a] >= 0 && (pos[a] as usize) < g.input[a]);
                        let v = if inside {
                            let i = (pos[0] as usize * g.input[1] + pos[1] as usize) * g.input[2] + pos[2] as usize;
                            x[(n * g.cin + ci) * ivol + i]
                        } else {
                            0.0
                        };
                        acc += w[(co * g.cin + ci) * taps + t] * v;
                        mults += 1;
                        adds += 1;
                    }
                }
                if let Some(b) = b {
                    acc += b[co];
                    adds += 1;
                }
                y[(n * g.cout + co) * ovol + o] = acc;
            }
        }
    }
    instrument::tally(mults, adds);
    y
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

/// Exact adjoint of [`conv_forward`].
pub fn conv_backward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let g = Geometry::new(spec, input.shape())?;
    let out_shape = spec.output_shape(input.shape())?;
    if grad_out.shape() != out_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "convolution backward",
            left: grad_out.shape().to_vec(),
            right: out_shape,
        });
    }
    if weights.shape() != spec.weight_shape().as_slice() {
        return Err(Error::ShapeMismatch {
            op: "convolution weights",
            left: weights.shape().to_vec(),
            right: spec.weight_shape(),
        });
    }
    let (ivol, ovol, taps) = (g.in_vol(), g.out_vol(), g.taps());
    let (x, w, gy) = (input.data(), weights.data(), grad_out.data());

    let mut gw = vec![0.0; weights.len()];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            let gwk = &mut gw[(co * g.cin + ci) * taps..][..taps];
            for (t, acc) in gwk.iter_mut().enumerate() {
                let k = g.tap(t);
                for n in 0..g.batch {
                    let xin = &x[(n * g.cin + ci) * ivol..][..ivol];
                    let gout = &gy[(n * g.cout + co) * ovol..][..ovol];
                    g.for_each_pair(k, |o, i| *acc += gout[o] * xin[i]);
                }
            }
        }
    }

    let mut gx = vec![0.0; input.len()];
    for n in 0..g.batch {
        for ci in 0..g.cin {
            let gin = &mut gx[(n * g.cin + ci) * ivol..][..ivol];
            for co in 0..g.cout {
                let gout = &gy[(n * g.cout + co) * ovol..][..ovol];
                let wk = &w[(co * g.cin + ci) * taps..][..taps];
                for (t, &wv) in wk.iter().enumerate() {
                    g.for_each_pair(g.tap(t), |o, i| gin[i] += wv * gout[o]);
                }
            }
        }
    }

    let bias = if spec.bias {
        let mut gb = vec![0.0; g.cout];
        for n in 0..g.batch {
            for (co, acc) in gb.iter_mut().enumerate() {
                *acc += gy[(n * g.cout + co) * ovol..][..ovol].iter().sum::<f64>();
            }
        }
        Some(Tensor::from_vec(&[g.cout], gb)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), gx)?,
        weights: Tensor::from_vec(weights.shape(), gw)?,
        bias,
    })
}

fn require_rank(spec: &ConvSpec, rank: usize) -> Result<()> {
    if spec.rank != rank {
        return Err(Error::Config(format!(
            "expected a rank-{rank} convolution spec, got rank {}",
            spec.rank
        )));
    }
    Ok(())
}

pub fn conv3d_forward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    require_rank(spec, 3)?;
    conv_forward(input, spec, weights, bias)
}

pub fn conv3d_backward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    require_rank(spec, 3)?;
    conv_backward(input, spec, weights, grad_out)
}

pub fn conv2d_forward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    require_rank(spec, 2)?;
    conv_forward(input, spec, weights, bias)
}

pub fn conv2d_backward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    require_rank(spec, 2)?;
    conv_backward(input, spec, weights, grad_out)
}

/// Convolution layer: parameters plus the cached forward input.
pub struct Conv {
    spec: ConvSpec,
    weight: Param,
    bias: Option<Param>,
    cached_input: Option<Tensor>,
}

impl Conv {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng>(name: &str, spec: ConvSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.in_channels * spec.kernel_volume();
        let weight = Param::he_normal(format!("{name}.weight"), &spec.weight_shape(), fan_in, rng)?;
        Self::with_weight(name, spec, weight)
    }

    pub fn zeros(name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        let weight = Param::zeros(format!("{name}.weight"), &spec.weight_shape())?;
        Self::with_weight(name, spec, weight)
    }

    fn with_weight(name: &str, spec: ConvSpec, weight: Param) -> Result<Self> {
        let bias = if spec.bias {
            Some(Param::zeros(format!("{name}.bias"), &[spec.out_channels])?)
        } else {
            None
        };
        Ok(Self {
            spec,
            weight,
            bias,
            cached_input: None,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight.value
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        &mut self.weight.value
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor> {
        self.bias.as_mut().map(|b| &mut b.value)
    }

    pub fn set_weight(&mut self, w: Tensor) -> Result<()> {
        if w.shape() != self.weight.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_weight",
                left: w.shape().to_vec(),
                right: self.weight.value.shape().to_vec(),
            });
        }
        self.weight.value = w;
        Ok(())
    }

    /// Full adjoint of the cached forward pass without touching accumulators.
    pub fn gradients(&self, grad_out: &Tensor) -> Result<ConvGrads> {
        let x = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::State(format!("{}: backward before forward", self.weight.name)))?;
        conv_backward(x, &self.spec, &self.weight.value, grad_out)
    }
}

impl Module for Conv {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = conv_forward(x, &self.spec, &self.weight.value, self.bias.as_ref().map(|b| &b.value))?;
        self.cached_input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let grads = self.gradients(grad_out)?;
        self.weight.grad.add_assign(&grads.weights)?;
        if let (Some(b), Some(gb)) = (self.bias.as_mut(), grads.bias.as_ref()) {
            b.grad.add_assign(gb)?;
        }
        Ok(grads.input)
    }

    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}
