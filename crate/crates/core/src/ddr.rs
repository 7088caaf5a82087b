//! Dimension-decomposed residual blocks.
//!
//! A full `k×k×k` convolution is replaced by a chain of one-dimensional
//! convolutions, one per spatial axis, inside a residual unit. Four
//! building blocks are provided:
//!
//! * [`DdrBasic`]: `y = x + F(x)`, `F` the chain of axis convolutions at the
//!   block's channel width.
//! * [`DdrBottleneck`]: a pointwise reduction to `c/r` channels, the axis
//!   convolutions each wrapped in an identity shortcut, and a pointwise
//!   restoration to `c` channels, all inside the outer residual.
//! * [`Downsample`]: halves every spatial axis and widens channels by
//!   concatenating a max-pooled copy of the input with a stride-2 pointwise
//!   convolution.
//! * [`LwAspp`]: parallel bottleneck blocks at several dilation rates,
//!   concatenated and fused by a pointwise convolution.
//!
//! Activations follow every convolution except the last one of a residual
//! branch; nothing follows a residual add, so a block whose residual branch
//! is zero is exactly the identity.
//!
//! Inner shortcut placement in the bottleneck (one identity skip around each
//! axis convolution) is a reading of the block's prose description rather
//! than of a machine-readable diagram.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Act, Activation, Conv, ConvSpec, MaxPool, Module, Param};
use crate::tensor::Tensor;

/// Internal spatial axis indices: 0 = depth (X), 1 = height (Y), 2 = width (Z).
pub const AXIS_ORDER_3D: [usize; 3] = [2, 1, 0];
pub const AXIS_ORDER_2D: [usize; 2] = [2, 1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdrBlockConfig {
    pub channels: usize,
    /// Bottleneck channel reduction factor.
    pub reduction: usize,
    pub dilation: usize,
    /// 2 or 3 spatial dimensions.
    pub rank: usize,
    pub kernel: usize,
    pub bias: bool,
    pub activation: Activation,
    /// Axes convolved in sequence; defaults to `(1,1,k) → (1,k,1) → (k,1,1)`.
    pub axis_order: Vec<usize>,
}

impl DdrBlockConfig {
    pub fn new3d(channels: usize) -> Self {
        Self {
            channels,
            reduction: 4,
            dilation: 1,
            rank: 3,
            kernel: 3,
            bias: false,
            activation: Activation::Relu,
            axis_order: AXIS_ORDER_3D.to_vec(),
        }
    }

    pub fn new2d(channels: usize) -> Self {
        Self {
            rank: 2,
            axis_order: AXIS_ORDER_2D.to_vec(),
            ..Self::new3d(channels)
        }
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_reduction(mut self, reduction: usize) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_kernel(mut self, kernel: usize) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self, bottleneck: bool) -> Result<()> {
        if self.rank != 2 && self.rank != 3 {
            return Err(Error::Config(format!("DDR rank {} unsupported", self.rank)));
        }
        if self.channels == 0 {
            return Err(Error::Config("DDR channels must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("DDR kernel {} must be odd", self.kernel)));
        }
        if self.dilation == 0 {
            return Err(Error::Config("DDR dilation must be at least 1".into()));
        }
        let lo = 3 - self.rank;
        let mut seen = [false; 3];
        if self.axis_order.len() != self.rank
            || self
                .axis_order
                .iter()
                .any(|&a| a < lo || a > 2 || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::Config(format!(
                "axis order {:?} is not a permutation of the block's spatial axes",
                self.axis_order
            )));
        }
        if bottleneck && (self.reduction == 0 || !self.channels.is_multiple_of(self.reduction)) {
            return Err(Error::Config(format!(
                "bottleneck channels {} not divisible by reduction {}",
                self.channels, self.reduction
            )));
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels / self.reduction
    }

    /// "Same"-padded one-dimensional convolution along `axis`.
    pub fn axis_conv(&self, axis: usize, cin: usize, cout: usize) -> ConvSpec {
        let mut spec = if self.rank == 3 {
            ConvSpec::new3d(cin, cout, [1; 3])
        } else {
            ConvSpec::new2d(cin, cout, [1, 1])
        };
        spec.kernel[axis] = self.kernel;
        spec.dilation[axis] = self.dilation;
        spec.padding[axis] = self.dilation * (self.kernel - 1) / 2;
        spec.bias = self.bias;
        spec
    }

    pub fn pointwise(&self, cin: usize, cout: usize) -> ConvSpec {
        let spec = if self.rank == 3 {
            ConvSpec::pointwise3d(cin, cout)
        } else {
            ConvSpec::pointwise2d(cin, cout)
        };
        spec.with_bias(self.bias)
    }

    /// Convolutions of the basic block's residual branch, in order.
    pub fn basic_convs(&self) -> Vec<ConvSpec> {
        self.axis_order
            .iter()
            .map(|&a| self.axis_conv(a, self.channels, self.channels))
            .collect()
    }

    /// Convolutions of the bottleneck block: reduce, axis convs, restore.
    pub fn bottleneck_convs(&self) -> Vec<ConvSpec> {
        let b = self.bottleneck_channels();
        let mut specs = vec![self.pointwise(self.channels, b)];
        specs.extend(self.axis_order.iter().map(|&a| self.axis_conv(a, b, b)));
        specs.push(self.pointwise(b, self.channels));
        specs
    }
}

fn make_conv<R: Rng>(name: String, spec: ConvSpec, rng: Option<&mut R>) -> Result<Conv> {
    match rng {
        Some(rng) => Conv::new(&name, spec, rng),
        None => Conv::zeros(&name, spec),
    }
}

fn check_channels(x: &Tensor, rank: usize, channels: usize, what: &str) -> Result<()> {
    if x.ndim() != rank + 2 || x.shape()[1] != channels {
        return Err(Error::Shape(format!(
            "{what} expects [N, {channels}, {} spatial axes], got {:?}",
            rank,
            x.shape()
        )));
    }
    Ok(())
}

/// Basic block: `y = x + F(x)`.
pub struct DdrBasic {
    cfg: DdrBlockConfig,
    convs: Vec<Conv>,
    acts: Vec<Act>,
}

impl DdrBasic {
    pub fn new<R: Rng>(name: &str, cfg: DdrBlockConfig, rng: &mut R) -> Result<Self> {
        Self::build(name, cfg, Some(rng))
    }

    /// All residual weights zero: the block is the identity.
    pub fn zeros(name: &str, cfg: DdrBlockConfig) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(name, cfg, None)
    }

    fn build<R: Rng>(name: &str, cfg: DdrBlockConfig, mut rng: Option<&mut R>) -> Result<Self> {
        cfg.validate(false)?;
        let convs = cfg
            .basic_convs()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| make_conv(format!("{name}/conv{i}"), spec, rng.as_deref_mut()))
            .collect::<Result<Vec<_>>>()?;
        let acts = (0..convs.len() - 1).map(|_| Act::new(cfg.activation)).collect();
        Ok(Self { cfg, convs, acts })
    }

    pub fn config(&self) -> &DdrBlockConfig {
        &self.cfg
    }

    pub fn convs_mut(&mut self) -> &mut [Conv] {
        &mut self.convs
    }

    /// The residual branch `F(x)` alone.
    pub fn residual(&mut self, x: &Tensor) -> Result<Tensor> {
        check_channels(x, self.cfg.rank, self.cfg.channels, "basic DDR block")?;
        let mut h = x.clone();
        for i in 0..self.convs.len() {
            h = self.convs[i].forward(&h)?;
            if i < self.acts.len() {
                h = self.acts[i].forward(&h)?;
            }
        }
        Ok(h)
    }
}

impl Module for DdrBasic {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let f = self.residual(x)?;
        x.add(&f)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for i in (0..self.convs.len()).rev() {
            if i < self.acts.len() {
                g = self.acts[i].backward(&g)?;
            }
            g = self.convs[i].backward(&g)?;
        }
        grad_out.add(&g)
    }

    fn params(&self) -> Vec<&Param> {
        self.convs.iter().flat_map(|c| c.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.convs.iter_mut().flat_map(|c| c.params_mut()).collect()
    }
}

/// Bottleneck block:
/// `a = σ(reduce(x)); h_i = h_{i−1} + σ(conv_i(h_{i−1})); y = x + restore(h_last)`.
pub struct DdrBottleneck {
    cfg: DdrBlockConfig,
    reduce: Conv,
    reduce_act: Act,
    inner: Vec<(Conv, Act)>,
    restore: Conv,
}

impl DdrBottleneck {
    pub fn new<R: Rng>(name: &str, cfg: DdrBlockConfig, rng: &mut R) -> Result<Self> {
        Self::build(name, cfg, Some(rng))
    }

    pub fn zeros(name: &str, cfg: DdrBlockConfig) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(name, cfg, None)
    }

    fn build<R: Rng>(name: &str, cfg: DdrBlockConfig, mut rng: Option<&mut R>) -> Result<Self> {
        cfg.validate(true)?;
        let mut specs = cfg.bottleneck_convs();
        let restore = specs.pop().expect("restore conv");
        let reduce = specs.remove(0);
        let reduce = make_conv(format!("{name}/reduce"), reduce, rng.as_deref_mut())?;
        let inner = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| {
                Ok((
                    make_conv(format!("{name}/conv{i}"), spec, rng.as_deref_mut())?,
                    Act::new(cfg.activation),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let restore = make_conv(format!("{name}/restore"), restore, rng)?;
        Ok(Self {
            reduce_act: Act::new(cfg.activation),
            cfg,
            reduce,
            inner,
            restore,
        })
    }

    pub fn config(&self) -> &DdrBlockConfig {
        &self.cfg
    }

    /// Every convolution in forward order: reduce, axis convs, restore.
    pub fn convs_mut(&mut self) -> Vec<&mut Conv> {
        let mut v = vec![&mut self.reduce];
        v.extend(self.inner.iter_mut().map(|(c, _)| c));
        v.push(&mut self.restore);
        v
    }
}

impl Module for DdrBottleneck {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        check_channels(x, self.cfg.rank, self.cfg.channels, "bottleneck DDR block")?;
        let a = self.reduce.forward(x)?;
        let mut h = self.reduce_act.forward(&a)?;
        for (conv, act) in &mut self.inner {
            let branch = conv.forward(&h)?;
            let branch = act.forward(&branch)?;
            h = h.add(&branch)?;
        }
        let restored = self.restore.forward(&h)?;
        x.add(&restored)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut gh = self.restore.backward(grad_out)?;
        for (conv, act) in self.inner.iter_mut().rev() {
            let gb = act.backward(&gh)?;
            let gb = conv.backward(&gb)?;
            gh = gh.add(&gb)?;
        }
        let ga = self.reduce_act.backward(&gh)?;
        let gx = self.reduce.backward(&ga)?;
        grad_out.add(&gx)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.reduce.params();
        v.extend(self.inner.iter().flat_map(|(c, _)| c.params()));
        v.extend(self.restore.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.reduce.params_mut();
        v.extend(self.inner.iter_mut().flat_map(|(c, _)| c.params_mut()));
        v.extend(self.restore.params_mut());
        v
    }
}

/// Channel-widening, resolution-halving block: `[maxpool(x), σ(pw_stride2(x))]`.
pub struct Downsample {
    rank: usize,
    in_channels: usize,
    pool: MaxPool,
    conv: Conv,
    act: Act,
}

impl Downsample {
    /// Pointwise branch spec for a block mapping `cin` to `cout` channels.
    pub fn conv_spec(rank: usize, cin: usize, cout: usize, bias: bool) -> ConvSpec {
        let spec = if rank == 3 {
            ConvSpec::pointwise3d(cin, cout - cin)
        } else {
            ConvSpec::pointwise2d(cin, cout - cin)
        };
        spec.with_stride(2).with_bias(bias)
    }

    pub fn new<R: Rng>(
        name: &str,
        rank: usize,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::validate(rank, in_channels, out_channels)?;
        let conv = Conv::new(
            &format!("{name}/conv"),
            Self::conv_spec(rank, in_channels, out_channels, bias),
            rng,
        )?;
        Ok(Self::assemble(rank, in_channels, conv, activation))
    }

    pub fn zeros(
        name: &str,
        rank: usize,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
        activation: Activation,
    ) -> Result<Self> {
        Self::validate(rank, in_channels, out_channels)?;
        let conv = Conv::zeros(
            &format!("{name}/conv"),
            Self::conv_spec(rank, in_channels, out_channels, bias),
        )?;
        Ok(Self::assemble(rank, in_channels, conv, activation))
    }

    fn validate(rank: usize, cin: usize, cout: usize) -> Result<()> {
        if rank != 2 && rank != 3 {
            return Err(Error::Config(format!("downsample rank {rank} unsupported")));
        }
        if cout <= cin {
            return Err(Error::Config(format!(
                "downsample must widen channels: {cin} -> {cout}"
            )));
        }
        Ok(())
    }

    fn assemble(rank: usize, in_channels: usize, conv: Conv, activation: Activation) -> Self {
        Self {
            rank,
            in_channels,
            pool: MaxPool::halving(rank),
            conv,
            act: Act::new(activation),
        }
    }

    pub fn conv_mut(&mut self) -> &mut Conv {
        &mut self.conv
    }
}

impl Module for Downsample {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        check_channels(x, self.rank, self.in_channels, "downsample block")?;
        if let Some(d) = x.shape()[2..].iter().find(|d| *d % 2 != 0) {
            return Err(Error::Shape(format!(
                "downsample needs even spatial sizes, got {d} in {:?}",
                x.shape()
            )));
        }
        let pooled = self.pool.forward(x)?;
        let widened = self.conv.forward(x)?;
        let widened = self.act.forward(&widened)?;
        Tensor::concat(&[&pooled, &widened], 1)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let c = grad_out.shape()[1];
        let gp = grad_out.narrow(1, 0, self.in_channels)?;
        let gc = grad_out.narrow(1, self.in_channels, c - self.in_channels)?;
        let gx = self.pool.backward(&gp)?;
        let gc = self.act.backward(&gc)?;
        let gx2 = self.conv.backward(&gc)?;
        gx.add(&gx2)
    }

    fn params(&self) -> Vec<&Param> {
        self.conv.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.conv.params_mut()
    }
}

/// Light-weight atrous spatial pyramid pooling.
pub struct LwAspp {
    channels: usize,
    rates: Vec<usize>,
    branches: Vec<DdrBottleneck>,
    fuse: Conv,
}

impl LwAspp {
    pub fn fuse_spec(channels: usize, rates: usize, out_channels: usize, bias: bool) -> ConvSpec {
        ConvSpec::pointwise3d(channels * rates, out_channels).with_bias(bias)
    }

    /// `block` supplies channels, reduction and activation; its dilation is
    /// replaced by each rate in turn.
    pub fn new<R: Rng>(
        name: &str,
        block: &DdrBlockConfig,
        rates: &[usize],
        out_channels: usize,
        fuse_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_rates(block, rates)?;
        let branches = rates
            .iter()
            .enumerate()
            .map(|(i, &d)| DdrBottleneck::new(&format!("{name}/rate{i}"), block.clone().with_dilation(d), rng))
            .collect::<Result<Vec<_>>>()?;
        let fuse = Conv::new(
            &format!("{name}/fuse"),
            Self::fuse_spec(block.channels, rates.len(), out_channels, fuse_bias),
            rng,
        )?;
        Ok(Self {
            channels: block.channels,
            rates: rates.to_vec(),
            branches,
            fuse,
        })
    }

    pub fn zeros(
        name: &str,
        block: &DdrBlockConfig,
        rates: &[usize],
        out_channels: usize,
        fuse_bias: bool,
    ) -> Result<Self> {
        Self::check_rates(block, rates)?;
        let branches = rates
            .iter()
            .enumerate()
            .map(|(i, &d)| DdrBottleneck::zeros(&format!("{name}/rate{i}"), block.clone().with_dilation(d)))
            .collect::<Result<Vec<_>>>()?;
        let fuse = Conv::zeros(
            &format!("{name}/fuse"),
            Self::fuse_spec(block.channels, rates.len(), out_channels, fuse_bias),
        )?;
        Ok(Self {
            channels: block.channels,
            rates: rates.to_vec(),
            branches,
            fuse,
        })
    }

    fn check_rates(block: &DdrBlockConfig, rates: &[usize]) -> Result<()> {
        if block.rank != 3 {
            return Err(Error::Config("LW-ASPP is three-dimensional".into()));
        }
        if rates.is_empty() || rates.contains(&0) {
            return Err(Error::Config(format!(
                "LW-ASPP rates {rates:?} must be non-empty and positive"
            )));
        }
        Ok(())
    }

    /// Smallest spatial extent accepted for the largest rate.
    pub fn min_extent(&self) -> usize {
        2 * self.rates.iter().max().copied().unwrap_or(1) + 1
    }

    pub fn fuse_mut(&mut self) -> &mut Conv {
        &mut self.fuse
    }

    pub fn branches_mut(&mut self) -> &mut [DdrBottleneck] {
        &mut self.branches
    }
}

impl Module for LwAspp {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        check_channels(x, 3, self.channels, "LW-ASPP")?;
        let min = self.min_extent();
        if x.shape()[2..].iter().any(|&d| d < min) {
            return Err(Error::Shape(format!(
                "LW-ASPP rates {:?} need spatial extents of at least {min}, got {:?}",
                self.rates,
                &x.shape()[2..]
            )));
        }
        let outs = self
            .branches
            .iter_mut()
            .map(|b| b.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = outs.iter().collect();
        let cat = Tensor::concat(&refs, 1)?;
        self.fuse.forward(&cat)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let gcat = self.fuse.backward(grad_out)?;
        let mut gx: Option<Tensor> = None;
        for (i, b) in self.branches.iter_mut().enumerate() {
            let g = b.backward(&gcat.narrow(1, i * self.channels, self.channels)?)?;
            gx = Some(match gx {
                None => g,
                Some(acc) => acc.add(&g)?,
            });
        }
        Ok(gx.expect("at least one rate"))
    }

    fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.branches.iter().flat_map(|b| b.params()).collect();
        v.extend(self.fuse.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.branches.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(self.fuse.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::conv3d_forward;
    use crate::nn::{gradcheck, GradcheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_blocks_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x3 = random(&[2, 8, 5, 4, 6], &mut rng);
        let x2 = random(&[1, 4, 6, 7], &mut rng);
        assert_eq!(
            DdrBasic::zeros("b", DdrBlockConfig::new3d(8))
                .unwrap()
                .forward(&x3)
                .unwrap(),
            x3
        );
        assert_eq!(
            DdrBasic::zeros("b", DdrBlockConfig::new2d(4))
                .unwrap()
                .forward(&x2)
                .unwrap(),
            x2
        );
        for d in [1, 2] {
            let cfg = DdrBlockConfig::new3d(8).with_dilation(d);
            assert_eq!(DdrBottleneck::zeros("b", cfg).unwrap().forward(&x3).unwrap(), x3);
        }
    }

    #[test]
    fn basic_block_is_a_third_of_a_full_conv() {
        let cfg = DdrBlockConfig::new3d(4);
        let block = DdrBasic::zeros("b", cfg).unwrap();
        let full = ConvSpec::new3d(4, 4, [3, 3, 3]);
        assert_eq!(block.num_params(), 144);
        assert_eq!(full.param_count(), 432);
        assert_eq!(3 * block.num_params(), full.param_count());
    }

    #[test]
    fn bottleneck_parameter_count_by_enumeration() {
        let block = DdrBottleneck::zeros("b", DdrBlockConfig::new3d(16)).unwrap();
        let enumerated: usize = block.params().iter().map(|p| p.value.data().len()).sum();
        assert_eq!(enumerated, 16 * 4 + 3 * (4 * 4 * 3) + 4 * 16);
        assert_eq!(enumerated, 272);
        let formula: usize = DdrBlockConfig::new3d(16)
            .bottleneck_convs()
            .iter()
            .map(|s| s.param_count())
            .sum();
        assert_eq!(formula, 272);
    }

    #[test]
    fn dilation_is_free_in_parameters() {
        let a = DdrBottleneck::zeros("a", DdrBlockConfig::new3d(12)).unwrap();
        let b = DdrBottleneck::zeros("b", DdrBlockConfig::new3d(12).with_dilation(3)).unwrap();
        assert_eq!(a.num_params(), b.num_params());
    }

    #[test]
    fn blocks_preserve_spatial_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 8, 7, 9, 8], &mut rng);
        for d in 1..=3 {
            let mut basic = DdrBasic::new("a", DdrBlockConfig::new3d(8).with_dilation(d), &mut rng).unwrap();
            assert_eq!(basic.forward(&x).unwrap().shape(), x.shape());
            let mut bn = DdrBottleneck::new("b", DdrBlockConfig::new3d(8).with_dilation(d), &mut rng).unwrap();
            assert_eq!(bn.forward(&x).unwrap().shape(), x.shape());
        }
    }

    #[test]
    fn config_errors() {
        assert!(DdrBottleneck::zeros("b", DdrBlockConfig::new3d(10)).is_err());
        assert!(DdrBasic::zeros("b", DdrBlockConfig::new3d(4).with_kernel(4)).is_err());
        let mut basic = DdrBasic::zeros("b", DdrBlockConfig::new3d(4)).unwrap();
        assert!(basic.forward(&Tensor::zeros(&[1, 3, 4, 4, 4]).unwrap()).is_err());
    }

    /// Full kernel equivalent to the linear triplet: for each output/input
    /// channel pair, the channel-summed product of the three 1-D kernels.
    fn composed_kernel(w_z: &Tensor, w_y: &Tensor, w_x: &Tensor, c: usize, k: usize) -> Tensor {
        let mut full = Tensor::zeros(&[c, c, k, k, k]).unwrap();
        for co in 0..c {
            for ci in 0..c {
                for (kd, kh, kw) in (0..k).flat_map(|a| (0..k).flat_map(move |b| (0..k).map(move |d| (a, b, d)))) {
                    let mut s = 0.0;
                    for m1 in 0..c {
                        for m2 in 0..c {
                            s += w_x.get(&[co, m2, kd, 0, 0]).unwrap()
                                * w_y.get(&[m2, m1, 0, kh, 0]).unwrap()
                                * w_z.get(&[m1, ci, 0, 0, kw]).unwrap();
                        }
                    }
                    full.set(&[co, ci, kd, kh, kw], s).unwrap();
                }
            }
        }
        full
    }

    #[test]
    fn linear_triplet_equals_full_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (c, k, d) in [(1, 3, 1), (1, 5, 2), (3, 3, 1), (2, 3, 2)] {
            let cfg = DdrBlockConfig::new3d(c)
                .with_kernel(k)
                .with_dilation(d)
                .with_activation(Activation::Identity);
            let mut block = DdrBasic::new("b", cfg, &mut rng).unwrap();
            let w: Vec<Tensor> = block.convs_mut().iter().map(|c| c.weight().clone()).collect();
            let full = composed_kernel(&w[0], &w[1], &w[2], c, k);
            let spec = ConvSpec::new3d(c, c, [k, k, k]).same(d);
            let x = random(&[1, c, 6, 7, 8], &mut rng);
            let reference = conv3d_forward(&x, &spec, &full, None).unwrap();
            let branch = block.residual(&x).unwrap();
            for (a, b) in branch.data().iter().zip(reference.data()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn downsample_shapes_and_zero_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[1, 4, 8, 8, 8], &mut rng);
        let mut ds = Downsample::new("d", 3, 4, 8, true, Activation::Relu, &mut rng).unwrap();
        assert_eq!(ds.forward(&x).unwrap().shape(), &[1, 8, 4, 4, 4]);
        assert_eq!(ds.num_params(), 20);

        let mut ds = Downsample::zeros("d", 3, 4, 8, true, Activation::Relu).unwrap();
        let y = ds.forward(&x).unwrap();
        let pooled = crate::nn::maxpool(&x, &[2, 2, 2], &[2, 2, 2]).unwrap().values;
        assert_eq!(y.narrow(1, 0, 4).unwrap(), pooled);
        assert!(y.narrow(1, 4, 4).unwrap().data().iter().all(|v| *v == 0.0));

        assert!(ds.forward(&random(&[1, 4, 8, 7, 8], &mut rng)).is_err());
        assert!(Downsample::zeros("d", 3, 4, 4, true, Activation::Relu).is_err());
    }

    #[test]
    fn aspp_shapes_and_averaging_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[1, 8, 8, 8, 8], &mut rng);
        let block = DdrBlockConfig::new3d(8);
        let mut aspp = LwAspp::new("a", &block, &[1, 2, 3], 8, true, &mut rng).unwrap();
        assert_eq!(aspp.forward(&x).unwrap().shape(), &[1, 8, 8, 8, 8]);

        let mut aspp = LwAspp::zeros("a", &block, &[1, 2, 3], 8, false).unwrap();
        let mut w = Tensor::zeros(&[8, 24, 1, 1, 1]).unwrap();
        for c in 0..8 {
            for slab in 0..3 {
                w.set(&[c, slab * 8 + c, 0, 0, 0], 1.0 / 3.0).unwrap();
            }
        }
        aspp.fuse_mut().set_weight(w).unwrap();
        let y = aspp.forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(aspp.forward(&random(&[1, 8, 6, 8, 8], &mut rng)).is_err());
    }

    #[test]
    fn blocks_pass_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = GradcheckConfig {
            probes: 60,
            ..Default::default()
        };
        let x = random(&[1, 8, 4, 5, 4], &mut rng);
        let mut basic = DdrBasic::new("a", DdrBlockConfig::new3d(8).with_bias(true), &mut rng).unwrap();
        let r = gradcheck(&mut basic, &x, &cfg).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
        let mut bn = DdrBottleneck::new("b", DdrBlockConfig::new3d(8).with_dilation(2), &mut rng).unwrap();
        let r = gradcheck(&mut bn, &x, &cfg).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
        let x2 = random(&[2, 4, 6, 5], &mut rng);
        let mut basic2 = DdrBasic::new("c", DdrBlockConfig::new2d(4), &mut rng).unwrap();
        let r = gradcheck(&mut basic2, &x2, &cfg).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }
}
