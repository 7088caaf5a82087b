//! Finite-difference gradient suites over every layer type, block variant
//! and the full network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ddr::{DdrBasic, DdrBlockConfig, DdrBottleneck, Downsample, LwAspp};
use crate::error::{Error, Result};
use crate::model::{Network, NetworkConfig, NetworkProbe};
use crate::nn::{gradcheck, Act, Activation, Conv, ConvSpec, GradcheckConfig, GradcheckReport, MaxPool, Module};
use crate::projection::{build_projection_table, CameraIntrinsics, Projection, VoxelGridSpec};
use crate::sceneio::{generate_scene, GenConfig};
use crate::tensor::Tensor;
use crate::train::make_batch;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const TARGETS: [&str; 15] = [
    "conv2d",
    "conv3d",
    "conv3d-dilated",
    "conv3d-strided",
    "maxpool2d",
    "maxpool3d",
    "relu",
    "projection",
    "basic-ddr-2d",
    "basic-ddr-3d",
    "bottleneck-ddr",
    "bottleneck-ddr-dilated",
    "downsample",
    "lw-aspp",
    "network",
];

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub target: String,
    pub report: GradcheckReport,
}

impl CheckOutcome {
    pub fn passes(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }

    pub fn line(&self) -> String {
        format!(
            "{:<24} {}  max rel err {:.3e}  probes {}  discarded {}",
            self.target,
            if self.passes() { "ok  " } else { "FAIL" },
            self.report.max_rel_error,
            self.report.probes,
            self.report.discarded
        )
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// The desk network on a 16³ projection grid; the context module keeps a
/// single rate because the 4³ output grid is too small for rates 2 and 3.
pub fn desk_16_config() -> NetworkConfig {
    let desk = NetworkConfig::desk();
    NetworkConfig {
        grid: VoxelGridSpec {
            dims: [16; 3],
            voxel_size: 0.1,
            ..desk.grid
        },
        aspp_rates: vec![1],
        ..desk
    }
}

fn check<M: Module>(target: &str, module: &mut M, x: &Tensor, cfg: &GradcheckConfig) -> Result<CheckOutcome> {
    Ok(CheckOutcome {
        target: target.to_string(),
        report: gradcheck(module, x, cfg)?,
    })
}

/// Runs one target, or all of them for `"all"`.
pub fn run_gradcheck(target: &str, seed: u64, probes: usize) -> Result<Vec<CheckOutcome>> {
    if target == "all" {
        return TARGETS.iter().map(|t| run_one(t, seed, probes)).collect();
    }
    Ok(vec![run_one(target, seed, probes)?])
}

fn run_one(target: &str, seed: u64, probes: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GradcheckConfig {
        probes,
        seed,
        ..Default::default()
    };
    let rng = &mut rng;
    match target {
        "conv2d" => {
            let mut m = Conv::new("c", ConvSpec::new2d(3, 4, [3, 3]).same(1), rng)?;
            check(target, &mut m, &random(&[2, 3, 6, 7], rng), &cfg)
        }
        "conv3d" => {
            let mut m = Conv::new("c", ConvSpec::new3d(3, 4, [3, 1, 3]).same(1), rng)?;
            check(target, &mut m, &random(&[1, 3, 5, 4, 6], rng), &cfg)
        }
        "conv3d-dilated" => {
            let mut m = Conv::new("c", ConvSpec::new3d(2, 3, [3, 3, 3]).same(2), rng)?;
            check(target, &mut m, &random(&[1, 2, 6, 5, 6], rng), &cfg)
        }
        "conv3d-strided" => {
            let mut m = Conv::new("c", ConvSpec::pointwise3d(3, 5).with_stride(2), rng)?;
            check(target, &mut m, &random(&[2, 3, 4, 6, 4], rng), &cfg)
        }
        "maxpool2d" => check(target, &mut MaxPool::halving(2), &random(&[2, 3, 6, 4], rng), &cfg),
        "maxpool3d" => check(target, &mut MaxPool::halving(3), &random(&[1, 2, 4, 6, 4], rng), &cfg),
        "relu" => check(
            target,
            &mut Act::new(Activation::Relu),
            &random(&[2, 3, 5, 5], rng),
            &cfg,
        ),
        "projection" => {
            let grid = VoxelGridSpec::new([-1.0, -1.0, 0.0], 0.5, [4, 4, 4])?;
            let cam = CameraIntrinsics::identity(4.0, 4.0, 3.5, 3.5);
            let tables = (0..2)
                .map(|_| {
                    let d = Tensor::from_vec(&[8, 8], (0..64).map(|_| rng.random_range(0.3..1.9)).collect())?;
                    build_projection_table(&d, &cam, &grid)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut m = Projection::new(grid);
            m.set_tables(tables)?;
            check(target, &mut m, &random(&[2, 3, 8, 8], rng), &cfg)
        }
        "basic-ddr-2d" => {
            let mut m = DdrBasic::new("b", DdrBlockConfig::new2d(4).with_bias(true), rng)?;
            check(target, &mut m, &random(&[2, 4, 6, 5], rng), &cfg)
        }
        "basic-ddr-3d" => {
            let mut m = DdrBasic::new("b", DdrBlockConfig::new3d(4), rng)?;
            check(target, &mut m, &random(&[1, 4, 4, 5, 4], rng), &cfg)
        }
        "bottleneck-ddr" => {
            let mut m = DdrBottleneck::new("b", DdrBlockConfig::new3d(8).with_bias(true), rng)?;
            check(target, &mut m, &random(&[1, 8, 4, 5, 4], rng), &cfg)
        }
        "bottleneck-ddr-dilated" => {
            let mut m = DdrBottleneck::new("b", DdrBlockConfig::new3d(8).with_dilation(2), rng)?;
            check(target, &mut m, &random(&[1, 8, 5, 5, 5], rng), &cfg)
        }
        "downsample" => {
            let mut m = Downsample::new("d", 3, 3, 8, true, Activation::Relu, rng)?;
            check(target, &mut m, &random(&[2, 3, 4, 4, 6], rng), &cfg)
        }
        "lw-aspp" => {
            let mut m = LwAspp::new("a", &DdrBlockConfig::new3d(8), &[1, 2], 6, true, rng)?;
            check(target, &mut m, &random(&[1, 8, 5, 5, 5], rng), &cfg)
        }
        "network" => {
            let net_cfg = desk_16_config();
            let mut net = Network::new(&net_cfg, rng)?;
            let gen = GenConfig {
                grid: net_cfg.label_grid()?,
                image: net_cfg.image,
                objects: [1, 1],
                ..GenConfig::default()
            };
            let sample = generate_scene(seed, &gen)?;
            let (batch, _, _) = make_batch(&[&sample])?;
            let mut probe = NetworkProbe::new(&mut net, &batch)?;
            let x = probe.input(&batch);
            check(target, &mut probe, &x, &cfg)
        }
        other => Err(Error::Config(format!(
            "unknown gradcheck target {other:?}; known: all, {}",
            TARGETS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_target_passes() {
        for t in TARGETS.iter().filter(|t| **t != "network") {
            let r = run_one(t, 3, 50).unwrap();
            assert!(r.passes(), "{}", r.line());
        }
    }

    #[test]
    fn unknown_target_is_a_config_error() {
        assert!(matches!(run_gradcheck("nope", 0, 5), Err(Error::Config(_))));
    }
}
