//! 2D→3D feature projection.
//!
//! Every valid depth pixel is back-projected through a pinhole camera into
//! world space and assigned the voxel containing it. Feature columns are then
//! scattered into the grid; when several pixels land in one voxel the
//! per-channel maximum wins and the winning pixel is recorded so the gradient
//! can be routed back to it alone.
//!
//! Conventions: camera frame x right, y down, z forward; pixel `(u, v)` has
//! its centre at integer coordinates; voxel cells are half-open
//! `[i, i+1)·voxel_size` from the grid origin; grid tensors are laid out
//! `[C, X, Y, Z]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument;
use crate::nn::{Module, Param};
use crate::tensor::Tensor;

/// Marks a pixel with no voxel (invalid depth or outside the grid) and a
/// voxel channel with no source pixel.
pub const SENTINEL_OUTSIDE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rotation, row-major.
    pub rotation: [f64; 9],
    /// Camera centre in world coordinates (meters).
    pub translation: [f64; 3],
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    (n > 1e-12).then(|| [a[0] / n, a[1] / n, a[2] / n])
}

impl CameraIntrinsics {
    /// Camera at the world origin with identity pose.
    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
        }
    }

    /// Camera at `eye` looking at `target`, world `+z` up.
    pub fn look_at(fx: f64, fy: f64, cx: f64, cy: f64, eye: [f64; 3], target: [f64; 3]) -> Result<Self> {
        let forward = normalize(sub(target, eye)).ok_or_else(|| Error::Value("look_at: eye equals target".into()))?;
        let right = normalize(cross(forward, [0.0, 0.0, 1.0]))
            .ok_or_else(|| Error::Value("look_at: view direction parallel to up".into()))?;
        let down = cross(forward, right);
        let mut rotation = [0.0; 9];
        for row in 0..3 {
            rotation[row * 3] = right[row];
            rotation[row * 3 + 1] = down[row];
            rotation[row * 3 + 2] = forward[row];
        }
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation: eye,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Value(format!(
                "focal lengths must be positive, got {} {}",
                self.fx, self.fy
            )));
        }
        if ![self.cx, self.cy]
            .iter()
            .chain(&self.rotation)
            .chain(&self.translation)
            .all(|v| v.is_finite())
        {
            return Err(Error::Value("camera parameters must be finite".into()));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k * 3 + i] * r[k * 3 + j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-9 {
                    return Err(Error::Value(format!(
                        "rotation is not orthonormal: (RᵀR)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn camera_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + t[0],
            r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + t[1],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + t[2],
        ]
    }

    pub fn world_to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let d = sub(p, self.translation);
        [
            r[0] * d[0] + r[3] * d[1] + r[6] * d[2],
            r[1] * d[0] + r[4] * d[1] + r[7] * d[2],
            r[2] * d[0] + r[5] * d[1] + r[8] * d[2],
        ]
    }

    /// Camera-frame point at pixel `(u, v)` with depth `d` (Z distance).
    pub fn back_project(&self, u: f64, v: f64, d: f64) -> [f64; 3] {
        [(u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d]
    }

    /// Continuous image coordinates and depth of a world point, if in front
    /// of the camera.
    pub fn project(&self, p_world: [f64; 3]) -> Option<(f64, f64, f64)> {
        let p = self.world_to_camera(p_world);
        (p[2] > 0.0).then(|| (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy, p[2]))
    }

    /// Pixel whose centre is nearest to the projection of `p_world`.
    pub fn pixel_of(&self, p_world: [f64; 3], height: usize, width: usize) -> Option<(usize, usize, f64)> {
        let (u, v, z) = self.project(p_world)?;
        let (u, v) = ((u + 0.5).floor(), (v + 0.5).floor());
        (u >= 0.0 && v >= 0.0 && u < width as f64 && v < height as f64).then_some((u as usize, v as usize, z))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let intr: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        intr.validate()?;
        Ok(intr)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

impl VoxelGridSpec {
    pub fn new(origin: [f64; 3], voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        let g = Self {
            origin,
            voxel_size,
            dims,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::Value(format!(
                "voxel size must be positive, got {}",
                self.voxel_size
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::Value(format!("grid dims must be positive, got {:?}", self.dims)));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn unflat(&self, flat: usize) -> [usize; 3] {
        let k = flat % self.dims[2];
        let j = (flat / self.dims[2]) % self.dims[1];
        [flat / (self.dims[1] * self.dims[2]), j, k]
    }

    /// Flat index of the cell containing `p`, or `None` outside the grid.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<usize> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let q = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(q >= 0.0 && q < self.dims[a] as f64) {
                return None;
            }
            idx[a] = q as usize;
        }
        Some(self.flat(idx[0], idx[1], idx[2]))
    }

    pub fn center(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflat(flat);
        std::array::from_fn(|a| self.origin[a] + (idx[a] as f64 + 0.5) * self.voxel_size)
    }

    /// Same world extent at `factor` times coarser cells.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.dims.iter().any(|d| d % factor != 0) {
            return Err(Error::Config(format!("grid {:?} not divisible by {factor}", self.dims)));
        }
        Self::new(
            self.origin,
            self.voxel_size * factor as f64,
            self.dims.map(|d| d / factor),
        )
    }
}

/// Per-pixel voxel assignment plus, after a forward pass, the per-voxel,
/// per-channel winning pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTable {
    pub height: usize,
    pub width: usize,
    pub grid: VoxelGridSpec,
    /// Row-major over `[H, W]`; [`SENTINEL_OUTSIDE`] for unassigned pixels.
    pub pixel_voxel: Vec<usize>,
    /// Row-major over `[C, X·Y·Z]`; set by [`project_forward`].
    pub winners: Option<Vec<usize>>,
}

impl ProjectionTable {
    pub fn num_assigned(&self) -> usize {
        self.pixel_voxel.iter().filter(|&&v| v != SENTINEL_OUTSIDE).count()
    }
}

pub fn build_projection_table(
    depth: &Tensor,
    intr: &CameraIntrinsics,
    grid: &VoxelGridSpec,
) -> Result<ProjectionTable> {
    if depth.ndim() != 2 {
        return Err(Error::Shape(format!("depth must be [H, W], got {:?}", depth.shape())));
    }
    grid.validate()?;
    let (height, width) = (depth.shape()[0], depth.shape()[1]);
    let mut pixel_voxel = Vec::with_capacity(height * width);
    for (p, &d) in depth.data().iter().enumerate() {
        if !d.is_finite() {
            return Err(Error::NonFinite {
                location: format!("depth pixel (u={}, v={}) = {d}", p % width, p / width),
            });
        }
        if d < 0.0 {
            return Err(Error::Value(format!(
                "negative depth {d} at pixel (u={}, v={})",
                p % width,
                p / width
            )));
        }
        let voxel = if d == 0.0 {
            None
        } else {
            let pc = intr.back_project((p % width) as f64, (p / width) as f64, d);
            grid.voxel_of(intr.camera_to_world(pc))
        };
        pixel_voxel.push(voxel.unwrap_or(SENTINEL_OUTSIDE));
    }
    Ok(ProjectionTable {
        height,
        width,
        grid: *grid,
        pixel_voxel,
        winners: None,
    })
}

/// Scatters `[C, H, W]` features into a `[C, X, Y, Z]` grid with per-channel
/// max-pooling over collisions. Pixels are visited in ascending flat order and
/// only a strictly larger value replaces the current winner, so ties go to
/// the lowest pixel index. Voxels with no source stay zero.
pub fn project_forward(features: &Tensor, table: &mut ProjectionTable) -> Result<Tensor> {
    let s = features.shape();
    if s.len() != 3 || s[1] != table.height || s[2] != table.width {
        return Err(Error::Shape(format!(
            "projection expects features [C, {}, {}], got {s:?}",
            table.height, table.width
        )));
    }
    let channels = s[0];
    let hw = table.height * table.width;
    let nv = table.grid.num_voxels();
    let mut out = vec![0.0; channels * nv];
    let mut winners = vec![SENTINEL_OUTSIDE; channels * nv];
    let f = features.data();
    for c in 0..channels {
        let (vals, wins) = (&mut out[c * nv..(c + 1) * nv], &mut winners[c * nv..(c + 1) * nv]);
        for (p, &v) in table.pixel_voxel.iter().enumerate() {
            if v == SENTINEL_OUTSIDE {
                continue;
            }
            let x = f[c * hw + p];
            if wins[v] == SENTINEL_OUTSIDE || x > vals[v] {
                vals[v] = x;
                wins[v] = p;
            }
        }
    }
    instrument::tally_elementwise(out.len());
    if instrument::recording_branches() {
        instrument::record_branches(winners.iter().map(|&w| w as u64));
    }
    table.winners = Some(winners);
    let d = table.grid.dims;
    Tensor::from_vec(&[channels, d[0], d[1], d[2]], out)
}

/// Routes each voxel's gradient to its recorded winning pixel.
pub fn project_backward(grad: &Tensor, table: &ProjectionTable) -> Result<Tensor> {
    let winners = table
        .winners
        .as_ref()
        .ok_or_else(|| Error::State("projection: backward before forward".into()))?;
    let nv = table.grid.num_voxels();
    let d = table.grid.dims;
    let channels = winners.len() / nv;
    if grad.shape() != [channels, d[0], d[1], d[2]] {
        return Err(Error::ShapeMismatch {
            op: "projection backward",
            left: grad.shape().to_vec(),
            right: vec![channels, d[0], d[1], d[2]],
        });
    }
    let hw = table.height * table.width;
    let mut out = vec![0.0; channels * hw];
    for (i, (&w, &g)) in winners.iter().zip(grad.data()).enumerate() {
        if w != SENTINEL_OUTSIDE {
            out[(i / nv) * hw + w] += g;
        }
    }
    Tensor::from_vec(&[channels, table.height, table.width], out)
}

/// Voxels of `grid` whose centre projects outside the image or lies behind
/// the camera.
pub fn outside_view_mask(intr: &CameraIntrinsics, grid: &VoxelGridSpec, height: usize, width: usize) -> Vec<bool> {
    (0..grid.num_voxels())
        .map(|v| intr.pixel_of(grid.center(v), height, width).is_none())
        .collect()
}

/// Batched projection layer `[N, C, H, W] → [N, C, X, Y, Z]`; one table per
/// batch element must be installed before each forward.
pub struct Projection {
    grid: VoxelGridSpec,
    tables: Vec<ProjectionTable>,
}

impl Projection {
    pub fn new(grid: VoxelGridSpec) -> Self {
        Self {
            grid,
            tables: Vec::new(),
        }
    }

    pub fn grid(&self) -> &VoxelGridSpec {
        &self.grid
    }

    pub fn set_tables(&mut self, tables: Vec<ProjectionTable>) -> Result<()> {
        if let Some(t) = tables.iter().find(|t| t.grid != self.grid) {
            return Err(Error::Config(format!(
                "projection table grid {:?} differs from layer grid {:?}",
                t.grid.dims, self.grid.dims
            )));
        }
        self.tables = tables;
        Ok(())
    }

    pub fn tables(&self) -> &[ProjectionTable] {
        &self.tables
    }
}

impl Module for Projection {
    fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 4 || x.shape()[0] != self.tables.len() {
            return Err(Error::Shape(format!(
                "projection layer holds {} tables, got input {:?}",
                self.tables.len(),
                x.shape()
            )));
        }
        let outs = self
            .tables
            .iter_mut()
            .enumerate()
            .map(|(n, table)| project_forward(&x.narrow(0, n, 1)?.reshape(&x.shape()[1..])?, table))
            .collect::<Result<Vec<_>>>()?;
        let d = self.grid.dims;
        let c = x.shape()[1];
        let data: Vec<f64> = outs.into_iter().flat_map(Tensor::into_data).collect();
        Tensor::from_vec(&[x.shape()[0], c, d[0], d[1], d[2]], data)
    }

    fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.ndim() != 5 || grad_out.shape()[0] != self.tables.len() {
            return Err(Error::Shape(format!("projection backward got {:?}", grad_out.shape())));
        }
        let parts = self
            .tables
            .iter()
            .enumerate()
            .map(|(n, table)| {
                let g = grad_out.narrow(0, n, 1)?.reshape(&grad_out.shape()[1..])?;
                project_backward(&g, table)
            })
            .collect::<Result<Vec<_>>>()?;
        let (c, h, w) = (parts[0].shape()[0], parts[0].shape()[1], parts[0].shape()[2]);
        let data: Vec<f64> = parts.into_iter().flat_map(Tensor::into_data).collect();
        Tensor::from_vec(&[grad_out.shape()[0], c, h, w], data)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradcheck, GradcheckConfig};
    use proptest::prelude::*;

    fn unit_grid(n: usize) -> VoxelGridSpec {
        VoxelGridSpec::new([0.0; 3], 1.0, [n; 3]).unwrap()
    }

    fn unit_camera() -> CameraIntrinsics {
        CameraIntrinsics::identity(1.0, 1.0, 0.0, 0.0)
    }

    #[test]
    fn back_projects_to_voxel() {
        let grid = unit_grid(4);
        let mut depth = Tensor::zeros(&[2, 2]).unwrap();
        depth.set(&[1, 1], 2.0).unwrap();
        let t = build_projection_table(&depth, &unit_camera(), &grid).unwrap();
        assert_eq!(t.pixel_voxel[3], grid.flat(2, 2, 2));
        assert_eq!(&t.pixel_voxel[..3], &[SENTINEL_OUTSIDE; 3]);
    }

    #[test]
    fn cell_boundaries_are_half_open() {
        let grid = unit_grid(4);
        let depth = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let t = build_projection_table(&depth, &unit_camera(), &grid).unwrap();
        assert_eq!(t.pixel_voxel[1], grid.flat(1, 0, 1));
        assert_eq!(grid.voxel_of([4.0, 0.0, 0.0]), None);
        assert_eq!(grid.voxel_of([-1e-12, 0.0, 0.0]), None);
    }

    #[test]
    fn rejects_bad_depth() {
        let grid = unit_grid(2);
        let nan = Tensor::from_vec(&[1, 1], vec![f64::NAN]).unwrap();
        assert!(matches!(
            build_projection_table(&nan, &unit_camera(), &grid),
            Err(Error::NonFinite { .. })
        ));
        let neg = Tensor::from_vec(&[1, 1], vec![-1.0]).unwrap();
        assert!(build_projection_table(&neg, &unit_camera(), &grid).is_err());
    }

    /// Three pixels: 0 and 2 share a voxel, 1 has its own.
    fn collision_table() -> ProjectionTable {
        ProjectionTable {
            height: 1,
            width: 3,
            grid: unit_grid(2),
            pixel_voxel: vec![5, 1, 5],
            winners: None,
        }
    }

    #[test]
    fn collisions_keep_the_maximum() {
        let mut t = collision_table();
        let f = Tensor::from_vec(&[1, 1, 3], vec![0.3, 0.1, 0.7]).unwrap();
        let out = project_forward(&f, &mut t).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2, 2]);
        assert_eq!(out.data()[5], 0.7);
        assert_eq!(out.data()[1], 0.1);
        assert_eq!(out.data().iter().filter(|v| **v == 0.0).count(), 6);
        assert_eq!(t.winners.as_ref().unwrap()[5], 2);

        let g = Tensor::new(&[1, 2, 2, 2], 1.0).unwrap();
        assert_eq!(project_backward(&g, &t).unwrap().data(), &[0.0, 1.0, 1.0]);
        let z = Tensor::zeros(&[1, 2, 2, 2]).unwrap();
        assert!(project_backward(&z, &t).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ties_go_to_lowest_pixel() {
        let mut t = collision_table();
        let f = Tensor::from_vec(&[1, 1, 3], vec![0.5, 0.0, 0.5]).unwrap();
        project_forward(&f, &mut t).unwrap();
        assert_eq!(t.winners.as_ref().unwrap()[5], 0);
    }

    #[test]
    fn negative_sources_beat_empty_voxels() {
        let mut t = collision_table();
        let f = Tensor::from_vec(&[1, 1, 3], vec![-0.5, -1.0, -0.25]).unwrap();
        let out = project_forward(&f, &mut t).unwrap();
        assert_eq!(out.data()[5], -0.25);
        assert_eq!(out.data()[1], -1.0);
    }

    #[test]
    fn winners_are_per_channel() {
        let mut t = collision_table();
        let f = Tensor::from_vec(&[2, 1, 3], vec![0.9, 0.0, 0.1, 0.1, 0.0, 0.9]).unwrap();
        project_forward(&f, &mut t).unwrap();
        let w = t.winners.unwrap();
        assert_eq!((w[5], w[8 + 5]), (0, 2));
    }

    #[test]
    fn injective_scatter_copies_values() {
        let mut t = ProjectionTable {
            pixel_voxel: vec![0, 3, 7],
            ..collision_table()
        };
        let f = Tensor::from_vec(&[1, 1, 3], vec![1.5, -2.0, 4.0]).unwrap();
        let out = project_forward(&f, &mut t).unwrap();
        assert_eq!(out.data(), &[1.5, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn backward_requires_forward() {
        let g = Tensor::zeros(&[1, 2, 2, 2]).unwrap();
        assert!(matches!(project_backward(&g, &collision_table()), Err(Error::State(_))));
    }

    #[test]
    fn look_at_is_orthonormal_and_round_trips() {
        let cam = CameraIntrinsics::look_at(50.0, 50.0, 32.0, 32.0, [0.8, -1.2, 0.9], [0.8, 0.8, 0.6]).unwrap();
        let p = [0.3, 0.7, 0.2];
        let q = cam.camera_to_world(cam.world_to_camera(p));
        assert!((0..3).all(|a| (p[a] - q[a]).abs() < 1e-12));
        let (u, v, z) = cam.project([0.8, 0.8, 0.6]).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 32.0).abs() < 1e-9 && z > 0.0);
        // A point above the view axis appears in the upper half of the image.
        assert!(cam.project([0.8, 0.8, 1.0]).unwrap().1 < 32.0);

        let mut bad = cam.clone();
        bad.rotation[0] = 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn intrinsics_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("intrinsics.json");
        let cam = CameraIntrinsics::look_at(40.0, 41.0, 31.5, 30.5, [0.8, -1.0, 1.0], [0.8, 0.8, 0.4]).unwrap();
        cam.save(&path).unwrap();
        assert_eq!(CameraIntrinsics::load(&path).unwrap(), cam);
        let text = std::fs::read_to_string(&path).unwrap();
        for key in ["fx", "fy", "cx", "cy", "rotation", "translation"] {
            assert!(text.contains(key));
        }
    }

    #[test]
    fn outside_view_marks_voxels_behind_camera() {
        let grid = VoxelGridSpec::new([-1.0, -1.0, -1.0], 1.0, [2, 2, 2]).unwrap();
        let mask = outside_view_mask(&CameraIntrinsics::identity(1.0, 1.0, 1.5, 1.5), &grid, 4, 4);
        for (v, &outside) in mask.iter().enumerate() {
            assert_eq!(outside, grid.unflat(v)[2] == 0, "voxel {v}");
        }
    }

    #[test]
    fn gradients_reach_winners_only() {
        let grid = VoxelGridSpec::new([-1.0, -1.0, 0.0], 0.5, [4, 4, 4]).unwrap();
        let cam = CameraIntrinsics::identity(4.0, 4.0, 3.5, 3.5);
        let depth = Tensor::from_vec(&[8, 8], (0..64).map(|i| 0.3 + 0.02 * (i % 7) as f64).collect()).unwrap();
        let table = build_projection_table(&depth, &cam, &grid).unwrap();
        assert!(table.num_assigned() > 20);
        let mut layer = Projection::new(grid);
        layer.set_tables(vec![table.clone(), table]).unwrap();
        let x = Tensor::from_vec(
            &[2, 2, 8, 8],
            (0..256).map(|i| ((i * 37) % 101) as f64 / 101.0 - 0.5).collect(),
        )
        .unwrap();
        let report = gradcheck(
            &mut layer,
            &x,
            &GradcheckConfig {
                probes: 60,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");

        let y = layer.forward(&x).unwrap();
        let g = layer.backward(&Tensor::new(y.shape(), 1.0).unwrap()).unwrap();
        for n in 0..2 {
            let winners = layer.tables()[n].winners.as_ref().unwrap();
            for c in 0..2 {
                for p in 0..64 {
                    let wins = winners[c * 64..(c + 1) * 64].contains(&p);
                    let grad = g.data()[(n * 2 + c) * 64 + p];
                    assert_eq!(grad, if wins { 1.0 } else { 0.0 });
                }
            }
        }
    }

    proptest! {
        #[test]
        fn gradient_mass_is_conserved(
            assign in proptest::collection::vec(0usize..10, 12),
            feats in proptest::collection::vec(-64i32..64, 24),
            grads in proptest::collection::vec(-64i32..64, 16),
        ) {
            // Values 8 and 9 mean "no voxel"; everything is dyadic so sums are exact.
            let pixel_voxel: Vec<usize> = assign.iter().map(|&a| if a >= 8 { SENTINEL_OUTSIDE } else { a }).collect();
            let mut t = ProjectionTable { height: 3, width: 4, grid: unit_grid(2), pixel_voxel, winners: None };
            let f = Tensor::from_vec(&[2, 3, 4], feats.iter().map(|&v| v as f64 / 8.0).collect()).unwrap();
            project_forward(&f, &mut t).unwrap();
            let g3 = Tensor::from_vec(&[2, 2, 2, 2], grads.iter().map(|&v| v as f64 / 4.0).collect()).unwrap();
            let g2 = project_backward(&g3, &t).unwrap();
            let sourced: f64 = t.winners.as_ref().unwrap().iter().zip(g3.data())
                .filter(|(w, _)| **w != SENTINEL_OUTSIDE).map(|(_, g)| *g).sum();
            prop_assert_eq!(g2.sum(), sourced);
        }

        #[test]
        fn tables_are_reproducible_and_in_range(
            depths in proptest::collection::vec(0.0f64..6.0, 30),
            fx in 0.5f64..4.0,
        ) {
            let grid = VoxelGridSpec::new([-2.0, -2.0, 0.0], 0.5, [8, 8, 6]).unwrap();
            let cam = CameraIntrinsics::identity(fx, fx, 2.5, 2.0);
            let depth = Tensor::from_vec(&[5, 6], depths).unwrap();
            let a = build_projection_table(&depth, &cam, &grid).unwrap();
            let b = build_projection_table(&depth, &cam, &grid).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.pixel_voxel.iter().all(|&v| v == SENTINEL_OUTSIDE || v < grid.num_voxels()));
        }
    }
}
