//! Synthetic RGB-D scenes, visibility masks, dataset files and metrics.

mod generate;
mod io;
mod masks;
mod metrics;

pub use generate::{
    build_room, cast, class_color, generate_scene, pixel_ray, place_camera, render, voxelize, Aabb, GenConfig,
    SceneObject,
};
pub use io::{read_manifest, read_sample, write_manifest, write_sample, Manifest, ManifestEntry, Split};
pub use masks::{compute_masks, loss_mask};
pub use metrics::{merge_reports, sc_metrics, ssc_metrics, ClassIou, MetricsReport, ScMetrics, SEMANTIC_CLASSES};

use crate::projection::CameraIntrinsics;
use crate::tensor::Tensor;

/// Class names in table order; index 0 is empty space.
pub const CLASS_NAMES: [&str; 12] = [
    "empty", "ceil.", "floor", "wall", "win.", "chair", "bed", "sofa", "table", "tvs", "furn.", "objs.",
];

/// Visibility flag stored per voxel in a `U8` mask tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MaskCode {
    ObservedEmpty = 0,
    ObservedSurface = 1,
    Occluded = 2,
    OutsideView = 3,
}

impl MaskCode {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => MaskCode::ObservedEmpty,
            1 => MaskCode::ObservedSurface,
            2 => MaskCode::Occluded,
            3 => MaskCode::OutsideView,
            _ => return None,
        })
    }

    pub fn value(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// `[3, H, W]` in `[0, 1]`.
    pub rgb: Tensor,
    /// `[H, W]` metres, 0 where there is no return.
    pub depth: Tensor,
    pub intrinsics: CameraIntrinsics,
    /// `[X, Y, Z]` class ids at output resolution, `I32`.
    pub labels: Tensor,
    /// `[X, Y, Z]` mask codes, `U8`.
    pub masks: Tensor,
}
