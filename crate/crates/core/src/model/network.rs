use rand::Rng;

use super::config::{Branch, NetworkConfig};
use crate::ddr::{DdrBasic, DdrBottleneck, Downsample, LwAspp};
use crate::error::{Error, Result};
use crate::nn::{Act, Checkpoint, Conv, MaxPool, Module, Param};
use crate::projection::{build_projection_table, CameraIntrinsics, Projection, ProjectionTable};
use crate::tensor::Tensor;

/// One mini-batch of network inputs.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, 3, H, W]`, ignored by depth-only networks.
    pub rgb: Tensor,
    /// `[N, 1, H, W]` in meters, 0 = invalid.
    pub depth: Tensor,
    pub intrinsics: Vec<CameraIntrinsics>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.depth.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn finite(t: Tensor, location: &str) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite {
            location: location.to_string(),
        })
    }
}

/// Feature extractor for one modality: 2D entry, projection, two 3D stages.
struct BranchNet {
    name: &'static str,
    shift: f64,
    entry: Conv,
    entry_act: Act,
    ddr2d: Vec<DdrBasic>,
    projection: Projection,
    down: Vec<Downsample>,
    blocks: Vec<DdrBottleneck>,
}

impl BranchNet {
    fn new<R: Rng>(cfg: &NetworkConfig, branch: Branch, rng: &mut R) -> Result<Self> {
        let name = branch.name();
        let entry = Conv::new(&format!("{name}/entry"), cfg.entry_spec(branch), rng)?;
        let ddr2d = (0..2)
            .map(|i| DdrBasic::new(&format!("{name}/2d/ddr{i}"), cfg.block2d(), rng))
            .collect::<Result<Vec<_>>>()?;
        let mut down = Vec::new();
        let mut blocks = Vec::new();
        let mut cin = cfg.c2;
        for stage in 0..2 {
            let cout = cfg.c3[stage];
            down.push(Downsample::new(
                &format!("{name}/3d/down{}", stage + 1),
                3,
                cin,
                cout,
                cfg.bias,
                cfg.activation,
                rng,
            )?);
            blocks.push(DdrBottleneck::new(
                &format!("{name}/3d/ddr{}", stage + 1),
                cfg.stage_block(stage),
                rng,
            )?);
            cin = cout;
        }
        Ok(Self {
            name,
            shift: match branch {
                Branch::Rgb => cfg.input_shift[0],
                Branch::Depth => cfg.input_shift[1],
            },
            entry,
            entry_act: Act::new(cfg.activation),
            ddr2d,
            projection: Projection::new(cfg.grid),
            down,
            blocks,
        })
    }

    /// Returns the two stage outputs (level 1 at half, level 2 at quarter
    /// projection resolution).
    fn forward(&mut self, image: &Tensor) -> Result<(Tensor, Tensor)> {
        let n = self.name;
        let mut shifted = image.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v -= self.shift);
        let mut h = finite(self.entry.forward(&shifted)?, &format!("{n}/entry"))?;
        h = self.entry_act.forward(&h)?;
        for (i, block) in self.ddr2d.iter_mut().enumerate() {
            h = finite(block.forward(&h)?, &format!("{n}/2d/ddr{i}"))?;
        }
        h = self.projection.forward(&h)?;
        let mut levels = Vec::new();
        for (s, (down, block)) in self.down.iter_mut().zip(&mut self.blocks).enumerate() {
            h = finite(down.forward(&h)?, &format!("{n}/3d/down{}", s + 1))?;
            h = finite(block.forward(&h)?, &format!("{n}/3d/ddr{}", s + 1))?;
            levels.push(h.clone());
        }
        let l2 = levels.pop().expect("two stages");
        let l1 = levels.pop().expect("two stages");
        Ok((l1, l2))
    }

    fn backward(&mut self, g1: &Tensor, g2: &Tensor) -> Result<Tensor> {
        let g = self.blocks[1].backward(g2)?;
        let g = self.down[1].backward(&g)?;
        let g = g1.add(&g)?;
        let g = self.blocks[0].backward(&g)?;
        let g = self.down[0].backward(&g)?;
        let mut g = self.projection.backward(&g)?;
        for block in self.ddr2d.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        let g = self.entry_act.backward(&g)?;
        self.entry.backward(&g)
    }

    fn params(&self) -> Vec<&Param> {
        let mut v = self.entry.params();
        v.extend(self.ddr2d.iter().flat_map(|b| b.params()));
        for (d, b) in self.down.iter().zip(&self.blocks) {
            v.extend(d.params());
            v.extend(b.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.entry.params_mut();
        v.extend(self.ddr2d.iter_mut().flat_map(|b| b.params_mut()));
        for (d, b) in self.down.iter_mut().zip(&mut self.blocks) {
            v.extend(d.params_mut());
            v.extend(b.params_mut());
        }
        v
    }
}

/// The complete two-branch network: extractors, fusion, LW-ASPP, head.
pub struct Network {
    cfg: NetworkConfig,
    branches: Vec<BranchNet>,
    level_pool: MaxPool,
    aspp: LwAspp,
    head: Vec<Conv>,
    head_acts: Vec<Act>,
}

impl Network {
    pub fn new<R: Rng>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate_trainable()?;
        let branches = cfg
            .modality
            .branches()
            .into_iter()
            .map(|b| BranchNet::new(cfg, b, rng))
            .collect::<Result<Vec<_>>>()?;
        let aspp = LwAspp::new("aspp", &cfg.aspp_block(), &cfg.aspp_rates, cfg.aspp_out, cfg.bias, rng)?;
        let head = cfg
            .head_specs()
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Conv::new(&format!("head/conv{i}"), spec, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self {
            cfg: cfg.clone(),
            branches,
            level_pool: MaxPool::halving(3),
            aspp,
            head,
            head_acts: (0..2).map(|_| Act::new(cfg.activation)).collect(),
        };
        net.scale_residual_branches(cfg.residual_init);
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Projection tables for every sample of `batch`.
    pub fn tables(&self, batch: &Batch) -> Result<Vec<ProjectionTable>> {
        let [h, w] = self.cfg.image;
        if batch.depth.shape() != [batch.len(), 1, h, w] {
            return Err(Error::Shape(format!(
                "depth must be [N, 1, {h}, {w}], got {:?}",
                batch.depth.shape()
            )));
        }
        if batch.intrinsics.len() != batch.len() {
            return Err(Error::Shape(format!(
                "{} intrinsics for a batch of {}",
                batch.intrinsics.len(),
                batch.len()
            )));
        }
        (0..batch.len())
            .map(|n| {
                let d = batch.depth.narrow(0, n, 1)?.reshape(&[h, w])?;
                build_projection_table(&d, &batch.intrinsics[n], &self.cfg.grid)
            })
            .collect()
    }

    pub fn set_tables(&mut self, tables: Vec<ProjectionTable>) -> Result<()> {
        for b in &mut self.branches {
            b.projection.set_tables(tables.clone())?;
        }
        Ok(())
    }

    /// Logits `[N, K, X/4, Y/4, Z/4]`.
    pub fn forward(&mut self, batch: &Batch) -> Result<Tensor> {
        let tables = self.tables(batch)?;
        self.set_tables(tables)?;
        self.forward_images(&batch.rgb, &batch.depth)
    }

    /// Forward with projection tables already installed.
    pub fn forward_images(&mut self, rgb: &Tensor, depth: &Tensor) -> Result<Tensor> {
        let [h, w] = self.cfg.image;
        let mut levels: Vec<(Tensor, Tensor)> = Vec::new();
        for b in &mut self.branches {
            let image = if b.name == "rgb" { rgb } else { depth };
            if image.ndim() != 4 || image.shape()[1..] != [b.entry.spec().in_channels, h, w] {
                return Err(Error::Shape(format!(
                    "{} input must be [N, {}, {h}, {w}], got {:?}",
                    b.name,
                    b.entry.spec().in_channels,
                    image.shape()
                )));
            }
            levels.push(b.forward(image)?);
        }
        let (mut l1, mut l2) = levels.remove(0);
        for (a, b) in levels {
            l1 = l1.add(&a)?;
            l2 = l2.add(&b)?;
        }
        let pooled = self.level_pool.forward(&l1)?;
        let cat = Tensor::concat(&[&pooled, &l2], 1)?;
        let mut h = finite(self.aspp.forward(&cat)?, "aspp")?;
        for i in 0..self.head.len() {
            h = finite(self.head[i].forward(&h)?, &format!("head/conv{i}"))?;
            if i < self.head_acts.len() {
                h = self.head_acts[i].forward(&h)?;
            }
        }
        Ok(h)
    }

    /// Back-propagates `grad_logits`, accumulating parameter gradients.
    /// Returns the gradient with respect to the first branch's image.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        let mut g = grad_logits.clone();
        for i in (0..self.head.len()).rev() {
            if i < self.head_acts.len() {
                g = self.head_acts[i].backward(&g)?;
            }
            g = self.head[i].backward(&g)?;
        }
        let gcat = self.aspp.backward(&g)?;
        let c1 = self.cfg.c3[0];
        let gp = gcat.narrow(1, 0, c1)?;
        let g2 = gcat.narrow(1, c1, self.cfg.c3[1])?;
        let g1 = self.level_pool.backward(&gp)?;
        let mut first = None;
        for b in &mut self.branches {
            let gi = b.backward(&g1, &g2)?;
            first.get_or_insert(gi);
        }
        Ok(first.expect("at least one branch"))
    }

    /// Predicted class per voxel, `[N, X/4, Y/4, Z/4]` int32.
    pub fn predict(&mut self, batch: &Batch) -> Result<Tensor> {
        self.forward(batch)?.argmax_axis(1)
    }

    /// Zeroes the final convolution of every residual branch so each DDR
    /// block reduces to the identity.
    pub fn zero_residual_branches(&mut self) {
        self.scale_residual_branches(0.0);
    }

    /// Multiplies weights and bias of the final convolution of every
    /// residual branch by `factor`.
    pub fn scale_residual_branches(&mut self, factor: f64) {
        let scale = |conv: &mut Conv| {
            conv.weight_mut().data_mut().iter_mut().for_each(|w| *w *= factor);
            if let Some(b) = conv.bias_mut() {
                b.data_mut().iter_mut().for_each(|w| *w *= factor);
            }
        };
        for b in &mut self.branches {
            for block in &mut b.ddr2d {
                scale(block.convs_mut().last_mut().expect("conv"));
            }
            for block in &mut b.blocks {
                scale(block.convs_mut().pop().expect("restore"));
            }
        }
        for block in self.aspp.branches_mut() {
            scale(block.convs_mut().pop().expect("restore"));
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for p in self.params() {
            ckpt.push(p.name.clone(), p.value.clone());
        }
        ckpt
    }

    /// Loads every parameter by name; extra entries are ignored.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for p in self.params_mut() {
            let t = ckpt
                .get(&p.name)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks parameter {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint load",
                    left: p.value.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            p.value = t.clone().with_dtype(crate::DType::F64)?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.branches.iter().flat_map(|b| b.params()).collect();
        v.extend(self.aspp.params());
        v.extend(self.head.iter().flat_map(|c| c.params()));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v: Vec<&mut Param> = self.branches.iter_mut().flat_map(|b| b.params_mut()).collect();
        v.extend(self.aspp.params_mut());
        v.extend(self.head.iter_mut().flat_map(|c| c.params_mut()));
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

/// Adapter exposing the network as a [`Module`] of its first branch's image,
/// with the other image and the projection tables held fixed.
pub struct NetworkProbe<'a> {
    net: &'a mut Network,
    fixed: Tensor,
}

impl<'a> NetworkProbe<'a> {
    pub fn new(net: &'a mut Network, batch: &Batch) -> Result<Self> {
        let tables = net.tables(batch)?;
        net.set_tables(tables)?;
        let fixed = batch.depth.clone();
        Ok(Self { net, fixed })
    }

    /// The probed input for `batch`.
    pub fn input(&self, batch: &Batch) -> Tensor {
        if self.net.cfg.modality.uses_rgb() {
            batch.rgb.clone()
        } else {
            batch.depth.clone()
        }
    }
}

impl Module for NetworkProbe<'_> {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if self.net.cfg.modality.uses_rgb() {
            self.net.forward_images(x, &self.fixed)
        } else {
            self.net.forward_images(x, x)
        }
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        self.net.backward(grad_out)
    }

    fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument;
    use crate::model::config::{AsppKind, Block3dKind, Modality};
    use crate::model::cost::analyze;
    use crate::nn::{gradcheck, GradcheckConfig};
    use crate::projection::VoxelGridSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn tiny(grid: usize, image: usize) -> NetworkConfig {
        NetworkConfig {
            image: [image, image],
            grid: VoxelGridSpec {
                origin: [0.0; 3],
                voxel_size: 1.6 / grid as f64,
                dims: [grid; 3],
            },
            c3: [8, 16],
            aspp_rates: vec![1],
            aspp_out: 8,
            head_hidden: 8,
            ..NetworkConfig::desk()
        }
    }

    /// Camera above the front edge of the grid looking in; depths scattered
    /// around the grid centre.
    fn toy_batch(cfg: &NetworkConfig, n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h, w] = cfg.image;
        let f = w as f64 * 0.8;
        let cam = CameraIntrinsics::look_at(
            f,
            f,
            (w as f64 - 1.0) / 2.0,
            (h as f64 - 1.0) / 2.0,
            [0.8, -0.6, 1.0],
            [0.8, 0.8, 0.6],
        )
        .unwrap();
        let depth = (0..n * h * w).map(|_| rng.random_range(1.0..2.0)).collect();
        let rgb = (0..n * 3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        Batch {
            rgb: Tensor::from_vec(&[n, 3, h, w], rgb).unwrap(),
            depth: Tensor::from_vec(&[n, 1, h, w], depth).unwrap(),
            intrinsics: vec![cam; n],
        }
    }

    #[test]
    fn desk_logits_shape_and_determinism() {
        let cfg = NetworkConfig::desk();
        let mut net = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let batch = toy_batch(&cfg, 1, 2);
        assert!(net.tables(&batch).unwrap()[0].num_assigned() > 1000);
        let a = net.forward(&batch).unwrap();
        assert_eq!(a.shape(), &[1, 12, 8, 8, 8]);
        assert_eq!(a, net.forward(&batch).unwrap());
        assert_eq!(net.predict(&batch).unwrap().shape(), &[1, 8, 8, 8]);
    }

    #[test]
    fn analyzer_matches_parameter_enumeration() {
        for modality in [Modality::Rgbd, Modality::Depth, Modality::Rgb] {
            let cfg = NetworkConfig {
                modality,
                ..NetworkConfig::desk()
            };
            let net = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            let mut by_layer: BTreeMap<String, usize> = BTreeMap::new();
            for p in net.params() {
                let layer = p.name.rsplit_once('.').unwrap().0.to_string();
                *by_layer.entry(layer).or_default() += p.numel();
            }
            let report = analyze(&cfg, 1).unwrap();
            let analyzed: BTreeMap<String, usize> = report
                .layers
                .iter()
                .filter(|l| l.params > 0)
                .map(|l| (l.path.clone(), l.params))
                .collect();
            assert_eq!(analyzed, by_layer);
            assert_eq!(report.total_params, net.num_params());
        }
    }

    #[test]
    fn analyzer_matches_instrumented_forward() {
        for (modality, batch) in [(Modality::Rgbd, 1), (Modality::Depth, 2)] {
            let cfg = NetworkConfig {
                modality,
                ..tiny(16, 8)
            };
            let mut net = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let b = toy_batch(&cfg, batch, 5);
            let (out, counts) = instrument::count_ops(|| net.forward(&b));
            let direct = net.forward(&b).unwrap();
            let out = out.unwrap();
            for (x, y) in out.data().iter().zip(direct.data()) {
                assert!((x - y).abs() < 1e-12);
            }
            let report = analyze(&cfg, batch).unwrap();
            assert_eq!(counts.multiplies, report.total_macs);
            assert_eq!(counts.flops(), report.total_flops);
        }
    }

    #[test]
    fn zero_depth_gives_spatially_constant_logits() {
        let cfg = tiny(16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = Network::new(&cfg, &mut rng).unwrap();
        for p in net.params_mut() {
            if p.name.starts_with("head/") || p.name == "aspp/fuse.bias" {
                p.value
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
        }
        let mut batch = toy_batch(&cfg, 1, 7);
        batch.depth.fill(0.0);
        let logits = net.forward(&batch).unwrap();
        let vol = logits.len() / 12;
        for k in 0..12 {
            let ch = &logits.data()[k * vol..(k + 1) * vol];
            assert!(ch.iter().all(|v| *v == ch[0]));
        }
    }

    #[test]
    fn zeroed_residuals_hide_inner_weights() {
        let cfg = tiny(16, 8);
        let mut net = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        net.zero_residual_branches();
        let batch = toy_batch(&cfg, 1, 9);
        let before = net.forward(&batch).unwrap();
        for p in net.params_mut() {
            let inner = p.name.contains("/ddr") && !p.name.contains("restore") && !p.name.contains("conv1.")
                || p.name.contains("aspp/rate") && !p.name.contains("restore");
            if inner {
                p.value.data_mut().iter_mut().for_each(|v| *v += 0.5);
            }
        }
        assert_eq!(net.forward(&batch).unwrap(), before);
    }

    #[test]
    fn checkpoint_restores_outputs() {
        let cfg = tiny(16, 8);
        let mut a = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let mut b = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let batch = toy_batch(&cfg, 1, 12);
        let bytes = a.to_checkpoint().to_bytes();
        b.load_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(a.forward(&batch).unwrap(), b.forward(&batch).unwrap());
        assert!(b.load_checkpoint(&Checkpoint::new()).is_err());
    }

    #[test]
    fn counter_only_variants_are_not_trainable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [
            NetworkConfig {
                aspp_kind: AsppKind::Full,
                ..NetworkConfig::desk()
            },
            NetworkConfig {
                block3d: Block3dKind::FullResidual,
                ..NetworkConfig::desk()
            },
        ] {
            assert!(Network::new(&cfg, &mut rng).is_err());
            assert!(analyze(&cfg, 1).is_ok());
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let cfg = tiny(16, 8);
        let mut net = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let mut batch = toy_batch(&cfg, 1, 14);
        batch.rgb = Tensor::zeros(&[1, 3, 8, 9]).unwrap();
        assert!(net.forward(&batch).is_err());
        batch.rgb = Tensor::zeros(&[1, 3, 8, 8]).unwrap();
        batch.intrinsics.clear();
        assert!(net.forward(&batch).is_err());
    }

    #[test]
    fn network_gradcheck_on_16_cubed_grid() {
        for modality in [Modality::Rgbd, Modality::Depth] {
            let cfg = NetworkConfig {
                modality,
                ..tiny(16, 8)
            };
            let mut net = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(15)).unwrap();
            let batch = toy_batch(&cfg, 1, 16);
            let mut probe = NetworkProbe::new(&mut net, &batch).unwrap();
            let x = probe.input(&batch);
            let report = gradcheck(
                &mut probe,
                &x,
                &GradcheckConfig {
                    probes: 50,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(report.passes(1e-4), "{report:?}");
        }
    }
}
