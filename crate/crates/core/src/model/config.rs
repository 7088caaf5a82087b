use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ddr::DdrBlockConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, ConvSpec};
use crate::projection::VoxelGridSpec;

/// Input modalities fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Rgbd,
    Depth,
    Rgb,
}

impl Modality {
    pub fn uses_rgb(self) -> bool {
        self != Modality::Depth
    }

    pub fn uses_depth(self) -> bool {
        self != Modality::Rgb
    }

    /// Branch names in construction order.
    pub fn branches(self) -> Vec<Branch> {
        let mut v = Vec::new();
        if self.uses_rgb() {
            v.push(Branch::Rgb);
        }
        if self.uses_depth() {
            v.push(Branch::Depth);
        }
        v
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgbd" => Ok(Modality::Rgbd),
            "depth" => Ok(Modality::Depth),
            "rgb" => Ok(Modality::Rgb),
            _ => Err(Error::Config(format!(
                "unknown modality {s:?} (expected rgbd, depth or rgb)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Rgb,
    Depth,
}

impl Branch {
    pub fn name(self) -> &'static str {
        match self {
            Branch::Rgb => "rgb",
            Branch::Depth => "depth",
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            Branch::Rgb => 3,
            Branch::Depth => 1,
        }
    }
}

/// Context module after fusion. `Full` replaces each rate's bottleneck DDR by
/// one dilated full `k³` convolution; it exists for cost comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AsppKind {
    #[default]
    Lightweight,
    Full,
}

/// 3D stage block. `FullResidual` (two full `k³` convolutions in a residual
/// unit) exists for cost comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Block3dKind {
    #[default]
    Bottleneck,
    FullResidual,
}

/// Declarative architecture description. In JSON form a `preset` key selects
/// the starting point and every other key overrides it (nested objects such
/// as `grid` merge field by field).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_classes: usize,
    /// Image height and width in pixels.
    pub image: [usize; 2],
    /// Grid the 2D features are projected onto; labels are `dims / 4`.
    pub grid: VoxelGridSpec,
    pub modality: Modality,
    /// Channels of the 2D branch.
    pub c2: usize,
    /// Channels of the two 3D stages.
    pub c3: [usize; 2],
    pub reduction: usize,
    pub kernel: usize,
    pub aspp_rates: Vec<usize>,
    pub aspp_out: usize,
    pub head_hidden: usize,
    /// Bias on convolutions inside DDR blocks.
    pub ddr_bias: bool,
    /// Bias on entry, down-sample, fusion and head convolutions.
    pub bias: bool,
    pub activation: Activation,
    pub axis_order: Vec<usize>,
    pub aspp_kind: AsppKind,
    pub block3d: Block3dKind,
    /// Constants subtracted from the RGB and depth images before the entry
    /// convolutions.
    pub input_shift: [f64; 2],
    /// Multiplier on the initial weights of the last convolution in every
    /// residual branch.
    pub residual_init: f64,
}

pub const PRESETS: [&str; 4] = ["desk", "paper-scale", "depth-only", "rgb-only"];

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetworkConfig {
    pub fn desk() -> Self {
        Self {
            num_classes: 12,
            image: [64, 64],
            grid: VoxelGridSpec {
                origin: [0.0; 3],
                voxel_size: 0.05,
                dims: [32; 3],
            },
            modality: Modality::Rgbd,
            c2: 4,
            c3: [16, 32],
            reduction: 4,
            kernel: 3,
            aspp_rates: vec![1, 2, 3],
            aspp_out: 32,
            head_hidden: 32,
            ddr_bias: false,
            bias: true,
            activation: Activation::Relu,
            axis_order: crate::ddr::AXIS_ORDER_3D.to_vec(),
            aspp_kind: AsppKind::Lightweight,
            block3d: Block3dKind::Bottleneck,
            input_shift: [0.5, 2.0],
            residual_init: 0.1,
        }
    }

    /// Wider channels landing the total between 190k and 200k parameters.
    pub fn paper_scale() -> Self {
        Self {
            image: [120, 160],
            grid: VoxelGridSpec {
                origin: [0.0; 3],
                voxel_size: 0.05,
                dims: [48, 32, 48],
            },
            c3: [32, 112],
            aspp_out: 128,
            head_hidden: 128,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper-scale" => Ok(Self::paper_scale()),
            "depth-only" => Ok(Self {
                modality: Modality::Depth,
                ..Self::desk()
            }),
            "rgb-only" => Ok(Self {
                modality: Modality::Rgb,
                ..Self::desk()
            }),
            _ => Err(Error::Config(format!(
                "unknown preset {name:?}; known: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Resolves a JSON document: preset defaults overlaid with explicit keys.
    pub fn from_json_value(value: &Value) -> Result<Self> {
        let Value::Object(obj) = value else {
            return Err(Error::Config("network config must be a JSON object".into()));
        };
        let mut overrides = obj.clone();
        let preset = match overrides.remove("preset") {
            None => "desk".to_string(),
            Some(Value::String(s)) => s,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let mut base = serde_json::to_value(Self::preset(&preset)?).expect("config serializes");
        merge(&mut base, &Value::Object(overrides));
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_json_value(&value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_json_value(&value)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let edge = |what: &str| Err(Error::Config(what.to_string()));
        if self.num_classes < 2 {
            return edge("num_classes must be at least 2");
        }
        if self.image.contains(&0) {
            return edge("image dims must be positive");
        }
        if !self.input_shift.iter().all(|v| v.is_finite()) || !self.residual_init.is_finite() {
            return edge("input_shift and residual_init must be finite");
        }
        self.grid.validate()?;
        if self.grid.dims.iter().any(|d| d % 4 != 0) {
            return Err(Error::Config(format!(
                "grid {:?} must be divisible by 4 for two down-sample stages",
                self.grid.dims
            )));
        }
        if self.c2 == 0 {
            return edge("c2 must be positive");
        }
        if self.c3[0] <= self.c2 {
            return Err(Error::Config(format!(
                "edge 2d -> down1: down-sample must widen channels, {} -> {}",
                self.c2, self.c3[0]
            )));
        }
        if self.c3[1] <= self.c3[0] {
            return Err(Error::Config(format!(
                "edge stage1 -> down2: down-sample must widen channels, {} -> {}",
                self.c3[0], self.c3[1]
            )));
        }
        for (name, c) in [
            ("stage1", self.c3[0]),
            ("stage2", self.c3[1]),
            ("aspp", self.fused_channels()),
        ] {
            if self.reduction == 0 || c % self.reduction != 0 {
                return Err(Error::Config(format!(
                    "edge {name}: {c} channels not divisible by bottleneck reduction {}",
                    self.reduction
                )));
            }
        }
        if self.aspp_out == 0 || self.head_hidden == 0 {
            return edge("aspp_out and head_hidden must be positive");
        }
        if self.aspp_rates.is_empty() || self.aspp_rates.contains(&0) {
            return edge("aspp_rates must be non-empty and positive");
        }
        self.block2d().validate(false)?;
        self.stage_block(0).validate(true)?;
        let label = self.label_dims();
        let need = 2 * self.aspp_rates.iter().max().unwrap() + 1;
        if label.iter().any(|&d| d < need) {
            return Err(Error::Config(format!(
                "edge fusion -> aspp: rates {:?} need spatial extent {need}, output grid is {label:?}",
                self.aspp_rates
            )));
        }
        Ok(())
    }

    /// Configuration for a trainable network; counter-only variants rejected.
    pub fn validate_trainable(&self) -> Result<()> {
        self.validate()?;
        if self.aspp_kind != AsppKind::Lightweight || self.block3d != Block3dKind::Bottleneck {
            return Err(Error::Config(
                "full-convolution ASPP and residual variants are available to the cost analyzer only".into(),
            ));
        }
        Ok(())
    }

    pub fn label_dims(&self) -> [usize; 3] {
        self.grid.dims.map(|d| d / 4)
    }

    pub fn label_grid(&self) -> Result<VoxelGridSpec> {
        self.grid.coarsen(4)
    }

    /// Channels entering the context module: both levels concatenated.
    pub fn fused_channels(&self) -> usize {
        self.c3[0] + self.c3[1]
    }

    pub fn block2d(&self) -> DdrBlockConfig {
        DdrBlockConfig {
            kernel: self.kernel,
            bias: self.ddr_bias,
            activation: self.activation,
            ..DdrBlockConfig::new2d(self.c2)
        }
    }

    fn block3d_with(&self, channels: usize) -> DdrBlockConfig {
        DdrBlockConfig {
            reduction: self.reduction,
            kernel: self.kernel,
            bias: self.ddr_bias,
            activation: self.activation,
            axis_order: self.axis_order.clone(),
            ..DdrBlockConfig::new3d(channels)
        }
    }

    pub fn stage_block(&self, stage: usize) -> DdrBlockConfig {
        self.block3d_with(self.c3[stage])
    }

    pub fn aspp_block(&self) -> DdrBlockConfig {
        self.block3d_with(self.fused_channels())
    }

    pub fn entry_spec(&self, branch: Branch) -> ConvSpec {
        ConvSpec::pointwise2d(branch.in_channels(), self.c2).with_bias(self.bias)
    }

    /// The three pointwise head convolutions.
    pub fn head_specs(&self) -> [ConvSpec; 3] {
        [
            ConvSpec::pointwise3d(self.aspp_out, self.head_hidden).with_bias(self.bias),
            ConvSpec::pointwise3d(self.head_hidden, self.head_hidden).with_bias(self.bias),
            ConvSpec::pointwise3d(self.head_hidden, self.num_classes).with_bias(self.bias),
        ]
    }

    /// Full `k³` convolution standing in for a decomposed chain.
    pub fn full_spec(&self, cin: usize, cout: usize, dilation: usize, bias: bool) -> ConvSpec {
        ConvSpec::new3d(cin, cout, [self.kernel; 3])
            .same(dilation)
            .with_bias(bias)
    }
}

/// Recursive object merge; non-object values in `over` replace `base`.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => merge_maps(b, o),
        (b, o) => *b = o.clone(),
    }
}

fn merge_maps(base: &mut Map<String, Value>, over: &Map<String, Value>) {
    for (k, v) in over {
        match base.get_mut(k) {
            Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}
