//! Procedural rooms: a floor slab, two walls, an optional ceiling, a few
//! axis-aligned furniture boxes and wall windows, rendered by ray casting.
//!
//! Box faces are placed on voxel-centre planes of the label grid, so every
//! rendered surface point falls in a voxel the box overlaps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::masks::compute_masks;
use super::{MaskCode, SceneSample, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::projection::{CameraIntrinsics, VoxelGridSpec};
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn overlap_volume(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|a| (self.max[a].min(other.max[a]) - self.min[a].max(other.min[a])).max(0.0))
            .product()
    }

    fn intersects(&self, other: &Aabb) -> bool {
        self.overlap_volume(other) > 0.0
    }

    /// Entry parameter and entry axis of the ray `o + t·d`, for `t > 0`.
    pub fn ray_hit(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, usize)> {
        let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut lo, mut hi) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            if lo > t0 {
                t0 = lo;
                axis = a;
            }
            t1 = t1.min(hi);
        }
        (t0 <= t1 && t0 > 0.0).then_some((t0, axis))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: u8,
    pub bounds: Aabb,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Image height and width.
    pub image: [usize; 2],
    /// Label grid (output resolution).
    pub grid: VoxelGridSpec,
    /// Inclusive range of furniture boxes per room.
    pub objects: [usize; 2],
    pub windows: bool,
    pub walls: bool,
    pub ceiling: bool,
    /// Focal length as a multiple of the image width.
    pub focal: f64,
    /// Placement attempts per object before giving up.
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            image: [64, 64],
            grid: VoxelGridSpec {
                origin: [0.0; 3],
                voxel_size: 0.2,
                dims: [8; 3],
            },
            objects: [2, 4],
            windows: true,
            walls: true,
            ceiling: false,
            focal: 0.8,
            max_retries: 200,
        }
    }
}

impl GenConfig {
    /// No furniture and no windows: floor and walls only.
    pub fn empty_room() -> Self {
        Self {
            objects: [0, 0],
            windows: false,
            ..Self::default()
        }
    }
}

/// Base colour per class id.
pub fn class_color(class: u8) -> [f64; 3] {
    const PALETTE: [[f64; 3]; 12] = [
        [0.0, 0.0, 0.0],
        [0.9, 0.9, 0.85],
        [0.55, 0.4, 0.25],
        [0.8, 0.78, 0.7],
        [0.55, 0.75, 0.95],
        [0.85, 0.3, 0.2],
        [0.3, 0.35, 0.8],
        [0.35, 0.65, 0.3],
        [0.75, 0.6, 0.3],
        [0.1, 0.1, 0.12],
        [0.6, 0.3, 0.6],
        [0.95, 0.8, 0.2],
    ];
    PALETTE[class as usize % PALETTE.len()]
}

/// Shading by the axis of the face a ray enters through.
pub const FACE_SHADE: [f64; 3] = [0.8, 0.9, 1.0];

type Range = [usize; 2];

/// Furniture footprint/height ranges in label-voxel units: (class, w, d, h).
const FURNITURE: [(u8, Range, Range, Range); 7] = [
    (5, [1, 2], [1, 2], [2, 3]),
    (6, [3, 4], [3, 4], [1, 2]),
    (7, [3, 4], [2, 2], [2, 2]),
    (8, [2, 3], [2, 3], [2, 3]),
    (9, [1, 2], [1, 1], [1, 2]),
    (10, [2, 3], [1, 2], [3, 5]),
    (11, [1, 1], [1, 1], [1, 1]),
];

/// Room geometry in world coordinates, `z` up; the grid spans the room.
pub fn build_room(seed: u64, cfg: &GenConfig) -> Result<Vec<SceneObject>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = &cfg.grid;
    let s = g.voxel_size;
    let lo = g.origin;
    let hi: [f64; 3] = std::array::from_fn(|a| g.origin[a] + s * g.dims[a] as f64);
    let half = s / 2.0;
    let far = 10.0;
    let jitter = |rng: &mut ChaCha8Rng, c: [f64; 3]| -> [f64; 3] {
        c.map(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0))
    };

    let mut objects = Vec::new();
    if cfg.windows && cfg.walls && g.dims[0] >= 6 && g.dims[2] >= 6 {
        let n = rng.random_range(0..=1usize);
        for _ in 0..n {
            let w = rng.random_range(2..=3usize);
            let i = rng.random_range(2..=g.dims[0] - 1 - w);
            let k = rng.random_range(2..=g.dims[2].saturating_sub(4).max(2));
            let min = [lo[0] + half + s * i as f64, hi[1] - half, lo[2] + half + s * k as f64];
            let max = [min[0] + s * w as f64, hi[1], min[2] + 2.0 * s];
            let color = jitter(&mut rng, class_color(4));
            objects.push(SceneObject {
                class: 4,
                bounds: Aabb::new(min, max),
                color,
            });
        }
    }
    if cfg.ceiling {
        objects.push(SceneObject {
            class: 1,
            bounds: Aabb::new([-far, -far, hi[2] - half], [far, far, hi[2] + far]),
            color: class_color(1),
        });
    }
    objects.push(SceneObject {
        class: 2,
        bounds: Aabb::new([-far, -far, lo[2] - far], [far, far, lo[2] + half]),
        color: class_color(2),
    });
    if cfg.walls {
        objects.push(SceneObject {
            class: 3,
            bounds: Aabb::new([lo[0] - far, hi[1] - half, lo[2]], [hi[0] + far, hi[1] + far, hi[2]]),
            color: class_color(3),
        });
        objects.push(SceneObject {
            class: 3,
            bounds: Aabb::new([lo[0] - far, lo[1] - far, lo[2]], [lo[0] + half, hi[1], hi[2]]),
            color: class_color(3),
        });
    }

    let count = rng.random_range(cfg.objects[0]..=cfg.objects[1]);
    let first_free = [1usize, 0];
    let last = [g.dims[0] - 1, g.dims[1] - 1];
    let mut placed: Vec<Aabb> = Vec::new();
    for _ in 0..count {
        let mut ok = None;
        let mut class = 0;
        for _ in 0..cfg.max_retries {
            let (c, wr, dr, hr) = FURNITURE[rng.random_range(0..FURNITURE.len())];
            class = c;
            let (mut w, mut d) = (rng.random_range(wr[0]..=wr[1]), rng.random_range(dr[0]..=dr[1]));
            if rng.random_bool(0.5) {
                std::mem::swap(&mut w, &mut d);
            }
            let h = rng.random_range(hr[0]..=hr[1]).min(g.dims[2].saturating_sub(2)).max(1);
            let w = w.min(last[0].saturating_sub(first_free[0]));
            let d = d.min(last[1].saturating_sub(first_free[1]));
            if w == 0 || d == 0 {
                continue;
            }
            let i = rng.random_range(first_free[0]..=last[0] - w);
            let j = rng.random_range(first_free[1]..=last[1] - d);
            let min = [lo[0] + half + s * i as f64, lo[1] + half + s * j as f64, lo[2] + half];
            let max = [min[0] + s * w as f64, min[1] + s * d as f64, min[2] + s * h as f64];
            let b = Aabb::new(min, max);
            if placed.iter().all(|p| !p.intersects(&b)) {
                ok = Some(b);
                break;
            }
        }
        let bounds = ok.ok_or_else(|| {
            Error::Generation(format!(
                "no room for another object (last tried a {}) after {} attempts, seed {seed}",
                CLASS_NAMES[class as usize], cfg.max_retries
            ))
        })?;
        placed.push(bounds);
        let color = jitter(&mut rng, class_color(class));
        objects.push(SceneObject { class, bounds, color });
    }
    Ok(objects)
}

/// Camera behind the open front side of the room, looking in and down.
pub fn place_camera(seed: u64, cfg: &GenConfig) -> Result<CameraIntrinsics> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let g = &cfg.grid;
    let ext: [f64; 3] = std::array::from_fn(|a| g.voxel_size * g.dims[a] as f64);
    let mut j = |scale: f64| rng.random_range(-scale..scale);
    let eye = [
        g.origin[0] + ext[0] * (0.55 + j(0.05)),
        g.origin[1] - ext[1] * (0.45 + j(0.05)),
        g.origin[2] + ext[2] * (0.85 + j(0.05)),
    ];
    let target = [
        g.origin[0] + ext[0] * (0.5 + j(0.05)),
        g.origin[1] + ext[1] * (0.55 + j(0.05)),
        g.origin[2] + ext[2] * (0.15 + j(0.05)),
    ];
    let [h, w] = cfg.image;
    let f = cfg.focal * w as f64;
    CameraIntrinsics::look_at(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, eye, target)
}

/// World-space direction of the ray through pixel `(u, v)`; its camera-frame
/// `z` component is 1, so the hit parameter equals the Z depth.
pub fn pixel_ray(intr: &CameraIntrinsics, u: usize, v: usize) -> ([f64; 3], [f64; 3]) {
    let dc = intr.back_project(u as f64, v as f64, 1.0);
    let r = &intr.rotation;
    let d = [
        r[0] * dc[0] + r[1] * dc[1] + r[2] * dc[2],
        r[3] * dc[0] + r[4] * dc[1] + r[5] * dc[2],
        r[6] * dc[0] + r[7] * dc[1] + r[8] * dc[2],
    ];
    (intr.translation, d)
}

/// Nearest hit `(t, object index, entry axis)`; ties go to the earlier object.
pub fn cast(objects: &[SceneObject], o: [f64; 3], d: [f64; 3]) -> Option<(f64, usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, obj) in objects.iter().enumerate() {
        if let Some((t, axis)) = obj.bounds.ray_hit(o, d) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, i, axis));
            }
        }
    }
    best
}

/// Renders `[3, H, W]` colour and `[H, W]` depth (0 where nothing is hit).
pub fn render(
    objects: &[SceneObject],
    intr: &CameraIntrinsics,
    height: usize,
    width: usize,
) -> Result<(Tensor, Tensor)> {
    let mut rgb = vec![0.0; 3 * height * width];
    let mut depth = vec![0.0; height * width];
    for v in 0..height {
        for u in 0..width {
            let (o, d) = pixel_ray(intr, u, v);
            if let Some((t, i, axis)) = cast(objects, o, d) {
                let p = v * width + u;
                depth[p] = t;
                for c in 0..3 {
                    rgb[c * height * width + p] = objects[i].color[c] * FACE_SHADE[axis];
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(&[3, height, width], rgb)?,
        Tensor::from_vec(&[height, width], depth)?,
    ))
}

/// Class of the object with the largest overlap volume per voxel (earlier
/// objects win ties); 0 where nothing overlaps.
pub fn voxelize(objects: &[SceneObject], grid: &VoxelGridSpec) -> Result<Tensor> {
    let s = grid.voxel_size;
    let mut labels = vec![0.0; grid.num_voxels()];
    for (v, label) in labels.iter_mut().enumerate() {
        let idx = grid.unflat(v);
        let min: [f64; 3] = std::array::from_fn(|a| grid.origin[a] + s * idx[a] as f64);
        let cell = Aabb::new(min, min.map(|m| m + s));
        let mut best = 0.0;
        for obj in objects {
            let vol = obj.bounds.overlap_volume(&cell);
            if vol > best {
                best = vol;
                *label = obj.class as f64;
            }
        }
    }
    Tensor::from_vec(&grid.dims, labels)?.with_dtype(DType::I32)
}

/// Deterministic synthetic sample for `seed`.
///
/// Masks come from [`compute_masks`]; a labelled voxel that the depth test
/// calls observed-empty (the ray grazes a thin part of it) is reclassified
/// as observed-surface so observed-empty voxels are always empty.
pub fn generate_scene(seed: u64, cfg: &GenConfig) -> Result<SceneSample> {
    cfg.grid.validate()?;
    if cfg.objects[0] > cfg.objects[1] {
        return Err(Error::Config(format!("object range {:?} is empty", cfg.objects)));
    }
    let objects = build_room(seed, cfg)?;
    let intrinsics = place_camera(seed, cfg)?;
    let [h, w] = cfg.image;
    let (rgb, depth) = render(&objects, &intrinsics, h, w)?;
    let labels = voxelize(&objects, &cfg.grid)?;
    let mut masks = compute_masks(&depth, &intrinsics, &cfg.grid)?;
    for (m, &l) in masks.data_mut().iter_mut().zip(labels.data()) {
        if l > 0.0 && *m == MaskCode::ObservedEmpty as u8 as f64 {
            *m = MaskCode::ObservedSurface as u8 as f64;
        }
    }
    Ok(SceneSample {
        rgb,
        depth,
        intrinsics,
        labels,
        masks,
    })
}
