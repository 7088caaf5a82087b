//! Network assembly and cost analysis.

pub mod config;
pub mod cost;
pub mod network;

pub use config::{AsppKind, Block3dKind, Branch, Modality, NetworkConfig, PRESETS};
pub use cost::{analyze, branch_params, count_flops, count_params, CostReport, DecompositionRow, LayerCost};
pub use network::{Batch, Network, NetworkProbe};
