//! Static parameter, FLOP and activation-memory accounting.
//!
//! The analyzer walks a [`NetworkConfig`] by shape propagation without
//! building any tensors. FLOPs follow the 2·MAC convention: each
//! multiply-accumulate counts one multiply and one add, every bias adds one
//! op per output element, and elementwise operators (residual/fusion add,
//! concat, pooling, relu, projection) count one op per output element. Raw
//! MACs are reported alongside so either convention can be read off.
//! Layer paths coincide with parameter names minus the `.weight`/`.bias`
//! suffix.

use serde::Serialize;

use super::config::{AsppKind, Block3dKind, Branch, NetworkConfig};
use crate::ddr::{DdrBlockConfig, Downsample, LwAspp};
use crate::error::Result;
use crate::nn::{Activation, ConvSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub path: String,
    pub op: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
    pub macs: u64,
    pub flops: u64,
}

impl LayerCost {
    pub fn activation_bytes(&self) -> u64 {
        8 * self.output_shape.iter().product::<usize>() as u64
    }
}

/// A chain of one-dimensional convolutions next to the single full kernel it
/// replaces, both at the same channels and output volume, bias excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecompositionRow {
    pub path: String,
    pub rank: usize,
    pub kernel: usize,
    pub channels: usize,
    pub decomposed_params: usize,
    pub full_params: usize,
    pub decomposed_macs: u64,
    pub full_macs: u64,
}

impl DecompositionRow {
    pub fn param_ratio(&self) -> (usize, usize) {
        reduce(self.decomposed_params, self.full_params)
    }

    pub fn mac_ratio(&self) -> (u64, u64) {
        let (a, b) = reduce(self.decomposed_macs as usize, self.full_macs as usize);
        (a as u64, b as u64)
    }

    /// MACs of a single one-dimensional layer of the chain against the full
    /// kernel: `k / k^rank`.
    pub fn layer_mac_ratio(&self) -> (u64, u64) {
        let (a, b) = reduce(self.decomposed_macs as usize, self.full_macs as usize * self.rank);
        (a as u64, b as u64)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn reduce(a: usize, b: usize) -> (usize, usize) {
    let g = gcd(a, b).max(1);
    (a / g, b / g)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub batch: usize,
    pub image: [usize; 2],
    pub grid: [usize; 3],
    pub layers: Vec<LayerCost>,
    pub decompositions: Vec<DecompositionRow>,
    pub total_params: usize,
    pub total_macs: u64,
    pub total_flops: u64,
    pub activation_bytes: u64,
}

/// Named parameter subtotals shown in reports.
pub const SUBTOTALS: [&str; 8] = [
    "rgb/2d/",
    "rgb/3d/",
    "depth/2d/",
    "depth/3d/",
    "rgb/",
    "depth/",
    "aspp/",
    "head/",
];

impl CostReport {
    fn layers_under<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a LayerCost> + 'a {
        self.layers.iter().filter(move |l| l.path.starts_with(prefix))
    }

    pub fn subtotal_params(&self, prefix: &str) -> usize {
        self.layers_under(prefix).map(|l| l.params).sum()
    }

    pub fn subtotal_flops(&self, prefix: &str) -> u64 {
        self.layers_under(prefix).map(|l| l.flops).sum()
    }

    /// Parameters of layers whose path contains `needle`.
    pub fn params_matching(&self, needle: &str) -> usize {
        self.layers
            .iter()
            .filter(|l| l.path.contains(needle))
            .map(|l| l.params)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let width = self.layers.iter().map(|l| l.path.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(
            s,
            "cost report: batch {}, image {}x{}, grid {}x{}x{}",
            self.batch, self.image[0], self.image[1], self.grid[0], self.grid[1], self.grid[2]
        );
        let _ = writeln!(
            s,
            "{:<width$}  {:<10} {:<22} {:>9} {:>14} {:>14}",
            "layer", "op", "output", "params", "MACs", "FLOPs"
        );
        for l in &self.layers {
            let shape = l
                .output_shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            let _ = writeln!(
                s,
                "{:<width$}  {:<10} {:<22} {:>9} {:>14} {:>14}",
                l.path, l.op, shape, l.params, l.macs, l.flops
            );
        }
        let _ = writeln!(s);
        let dw = self
            .decompositions
            .iter()
            .map(|d| d.path.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let _ = writeln!(
            s,
            "{:<dw$}  {:>4} {:>2} {:>8} {:>11} {:>11} {:>12} {:>9} {:>15}",
            "decomposed block",
            "rank",
            "k",
            "channels",
            "decomposed",
            "full",
            "param ratio",
            "MAC ratio",
            "per-layer MACs"
        );
        for d in &self.decompositions {
            let (pn, pd) = d.param_ratio();
            let (mn, md) = d.mac_ratio();
            let (ln, ld) = d.layer_mac_ratio();
            let _ = writeln!(
                s,
                "{:<dw$}  {:>4} {:>2} {:>8} {:>11} {:>11} {:>12} {:>9} {:>15}",
                d.path,
                d.rank,
                d.kernel,
                d.channels,
                d.decomposed_params,
                d.full_params,
                format!("{pn}/{pd}"),
                format!("{mn}/{md}"),
                format!("{ln}/{ld}")
            );
        }
        let _ = writeln!(s);
        for prefix in SUBTOTALS {
            let p = self.subtotal_params(prefix);
            if p > 0 {
                let _ = writeln!(
                    s,
                    "subtotal {prefix:<10} params {p:>9}  FLOPs {:>14}",
                    self.subtotal_flops(prefix)
                );
            }
        }
        let _ = writeln!(
            s,
            "total params {}  MACs {}  FLOPs {}  activations {} bytes",
            self.total_params, self.total_macs, self.total_flops, self.activation_bytes
        );
        s
    }
}

struct Walker {
    layers: Vec<LayerCost>,
    decompositions: Vec<DecompositionRow>,
    activation: Activation,
}

fn numel(shape: &[usize]) -> u64 {
    shape.iter().product::<usize>() as u64
}

impl Walker {
    fn conv(&mut self, path: String, spec: &ConvSpec, input: &[usize]) -> Result<Vec<usize>> {
        let out = spec.output_shape(input)?;
        let out_elems = numel(&out);
        let macs = out_elems * (spec.in_channels * spec.kernel_volume()) as u64;
        let bias_adds = if spec.bias { out_elems } else { 0 };
        self.layers.push(LayerCost {
            path,
            op: format!("conv{}d", spec.rank),
            output_shape: out.clone(),
            params: spec.param_count(),
            macs,
            flops: 2 * macs + bias_adds,
        });
        Ok(out)
    }

    fn elementwise(&mut self, path: String, op: &str, shape: Vec<usize>) -> Vec<usize> {
        self.layers.push(LayerCost {
            path,
            op: op.into(),
            flops: numel(&shape),
            output_shape: shape.clone(),
            params: 0,
            macs: 0,
        });
        shape
    }

    fn relu(&mut self, path: String, shape: Vec<usize>) -> Vec<usize> {
        match self.activation {
            Activation::Relu => self.elementwise(path, "relu", shape),
            Activation::Identity => shape,
        }
    }

    fn decomposition(&mut self, path: &str, block: &DdrBlockConfig, specs: &[ConvSpec], shape: &[usize]) -> Result<()> {
        let c = specs[0].in_channels;
        let full = if block.rank == 3 {
            ConvSpec::new3d(c, c, [block.kernel; 3])
        } else {
            ConvSpec::new2d(c, c, [block.kernel; 2])
        }
        .same(block.dilation);
        let vol = numel(&full.output_shape(shape)?) / c as u64;
        let macs = |s: &ConvSpec| vol * (s.in_channels * s.out_channels * s.kernel_volume()) as u64;
        self.decompositions.push(DecompositionRow {
            path: path.to_string(),
            rank: block.rank,
            kernel: block.kernel,
            channels: c,
            decomposed_params: specs.iter().map(|s| s.weight_count()).sum(),
            full_params: full.weight_count(),
            decomposed_macs: specs.iter().map(macs).sum(),
            full_macs: macs(&full),
        });
        Ok(())
    }

    fn basic_ddr(&mut self, path: &str, block: &DdrBlockConfig, input: &[usize]) -> Result<Vec<usize>> {
        let specs = block.basic_convs();
        let mut shape = input.to_vec();
        for (i, spec) in specs.iter().enumerate() {
            shape = self.conv(format!("{path}/conv{i}"), spec, &shape)?;
            if i + 1 < specs.len() {
                shape = self.relu(format!("{path}/relu{i}"), shape);
            }
        }
        self.decomposition(path, block, &specs, input)?;
        Ok(self.elementwise(format!("{path}/add"), "add", shape))
    }

    fn bottleneck_ddr(&mut self, path: &str, block: &DdrBlockConfig, input: &[usize]) -> Result<Vec<usize>> {
        let mut specs = block.bottleneck_convs();
        let restore = specs.pop().expect("restore");
        let reduce = specs.remove(0);
        let mut shape = self.conv(format!("{path}/reduce"), &reduce, input)?;
        shape = self.relu(format!("{path}/reduce_relu"), shape);
        let inner_input = shape.clone();
        for (i, spec) in specs.iter().enumerate() {
            let branch = self.conv(format!("{path}/conv{i}"), spec, &shape)?;
            let branch = self.relu(format!("{path}/relu{i}"), branch);
            shape = self.elementwise(format!("{path}/add{i}"), "add", branch);
        }
        let out = self.conv(format!("{path}/restore"), &restore, &shape)?;
        self.decomposition(path, block, &specs, &inner_input)?;
        Ok(self.elementwise(format!("{path}/add"), "add", out))
    }

    fn full_residual(
        &mut self,
        path: &str,
        cfg: &NetworkConfig,
        channels: usize,
        input: &[usize],
    ) -> Result<Vec<usize>> {
        let spec = cfg.full_spec(channels, channels, 1, cfg.ddr_bias);
        let shape = self.conv(format!("{path}/conv0"), &spec, input)?;
        let shape = self.relu(format!("{path}/relu0"), shape);
        let shape = self.conv(format!("{path}/conv1"), &spec, &shape)?;
        Ok(self.elementwise(format!("{path}/add"), "add", shape))
    }

    fn downsample(
        &mut self,
        path: &str,
        cfg: &NetworkConfig,
        cin: usize,
        cout: usize,
        input: &[usize],
    ) -> Result<Vec<usize>> {
        let mut pooled = input.to_vec();
        for d in &mut pooled[2..] {
            *d /= 2;
        }
        self.elementwise(format!("{path}/pool"), "maxpool", pooled.clone());
        let spec = Downsample::conv_spec(3, cin, cout, cfg.bias);
        let conv = self.conv(format!("{path}/conv"), &spec, input)?;
        self.relu(format!("{path}/relu"), conv);
        let mut out = pooled;
        out[1] = cout;
        Ok(self.elementwise(format!("{path}/concat"), "concat", out))
    }
}

/// Parameter, FLOP and memory report for `cfg` at batch size `batch`.
pub fn analyze(cfg: &NetworkConfig, batch: usize) -> Result<CostReport> {
    cfg.validate()?;
    let mut w = Walker {
        layers: Vec::new(),
        decompositions: Vec::new(),
        activation: cfg.activation,
    };
    let [h, wd] = cfg.image;
    let g = cfg.grid.dims;
    let mut levels = Vec::new();
    for branch in cfg.modality.branches() {
        let name = branch.name();
        let input = [batch, branch.in_channels(), h, wd];
        let shape = w.conv(format!("{name}/entry"), &cfg.entry_spec(branch), &input)?;
        let mut shape = w.relu(format!("{name}/entry_relu"), shape);
        for i in 0..2 {
            shape = w.basic_ddr(&format!("{name}/2d/ddr{i}"), &cfg.block2d(), &shape)?;
        }
        shape = w.elementwise(
            format!("{name}/projection"),
            "projection",
            vec![batch, cfg.c2, g[0], g[1], g[2]],
        );
        let mut cin = cfg.c2;
        let mut outs = Vec::new();
        for stage in 0..2 {
            let cout = cfg.c3[stage];
            shape = w.downsample(&format!("{name}/3d/down{}", stage + 1), cfg, cin, cout, &shape)?;
            let path = format!("{name}/3d/ddr{}", stage + 1);
            shape = match cfg.block3d {
                Block3dKind::Bottleneck => w.bottleneck_ddr(&path, &cfg.stage_block(stage), &shape)?,
                Block3dKind::FullResidual => w.full_residual(&path, cfg, cout, &shape)?,
            };
            outs.push(shape.clone());
            cin = cout;
        }
        levels.push(outs);
    }
    let (l1, l2) = (levels[0][0].clone(), levels[0][1].clone());
    if levels.len() > 1 {
        w.elementwise("fusion/add1".into(), "add", l1.clone());
        w.elementwise("fusion/add2".into(), "add", l2.clone());
    }
    let mut pooled = l1.clone();
    pooled[2..].copy_from_slice(&l2[2..]);
    w.elementwise("fusion/pool".into(), "maxpool", pooled);
    let mut cat = l2.clone();
    cat[1] = cfg.fused_channels();
    let cat = w.elementwise("fusion/concat".into(), "concat", cat);

    let block = cfg.aspp_block();
    for (i, &d) in cfg.aspp_rates.iter().enumerate() {
        let path = format!("aspp/rate{i}");
        match cfg.aspp_kind {
            AsppKind::Lightweight => {
                w.bottleneck_ddr(&path, &block.clone().with_dilation(d), &cat)?;
            }
            AsppKind::Full => {
                let spec = cfg.full_spec(block.channels, block.channels, d, cfg.ddr_bias);
                let out = w.conv(format!("{path}/conv"), &spec, &cat)?;
                w.relu(format!("{path}/relu"), out);
            }
        }
    }
    let mut stacked = cat.clone();
    stacked[1] *= cfg.aspp_rates.len();
    let stacked = w.elementwise("aspp/concat".into(), "concat", stacked);
    let fuse = LwAspp::fuse_spec(block.channels, cfg.aspp_rates.len(), cfg.aspp_out, cfg.bias);
    let mut shape = w.conv("aspp/fuse".into(), &fuse, &stacked)?;
    for (i, spec) in cfg.head_specs().iter().enumerate() {
        shape = w.conv(format!("head/conv{i}"), spec, &shape)?;
        if i < 2 {
            shape = w.relu(format!("head/relu{i}"), shape);
        }
    }

    let layers = w.layers;
    Ok(CostReport {
        batch,
        image: cfg.image,
        grid: g,
        total_params: layers.iter().map(|l| l.params).sum(),
        total_macs: layers.iter().map(|l| l.macs).sum(),
        total_flops: layers.iter().map(|l| l.flops).sum(),
        activation_bytes: layers.iter().map(|l| l.activation_bytes()).sum(),
        layers,
        decompositions: w.decompositions,
    })
}

/// Learnable scalars per layer and in total (independent of input shape).
pub fn count_params(cfg: &NetworkConfig) -> Result<CostReport> {
    analyze(cfg, 1)
}

pub fn count_flops(cfg: &NetworkConfig, batch: usize) -> Result<CostReport> {
    analyze(cfg, batch)
}

/// Parameters of one modality branch (entry through both 3D stages).
pub fn branch_params(cfg: &NetworkConfig, branch: Branch) -> Result<usize> {
    Ok(count_params(cfg)?.subtotal_params(&format!("{}/", branch.name())))
}
