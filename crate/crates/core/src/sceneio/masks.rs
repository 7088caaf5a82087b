use super::MaskCode;
use crate::error::{Error, Result};
use crate::projection::{CameraIntrinsics, VoxelGridSpec};
use crate::tensor::{DType, Tensor};

/// Per-voxel visibility classification from a depth image.
///
/// Each voxel centre is projected to its nearest pixel. Centres behind the
/// camera or off the image are outside-view. Otherwise, with `Z` the centre's
/// camera depth, `d` the pixel depth and `δ` half a voxel: `Z < d − δ` is
/// observed-empty, `|Z − d| ≤ δ` observed-surface, `Z > d + δ` occluded. A
/// pixel with no depth return gives no evidence, so its voxels are occluded.
pub fn compute_masks(depth: &Tensor, intr: &CameraIntrinsics, grid: &VoxelGridSpec) -> Result<Tensor> {
    if depth.ndim() != 2 {
        return Err(Error::Shape(format!("depth must be [H, W], got {:?}", depth.shape())));
    }
    let (h, w) = (depth.shape()[0], depth.shape()[1]);
    let half = grid.voxel_size / 2.0;
    let codes = (0..grid.num_voxels())
        .map(|v| {
            let code = match intr.pixel_of(grid.center(v), h, w) {
                None => MaskCode::OutsideView,
                Some((u, px, z)) => {
                    let d = depth.data()[px * w + u];
                    if d == 0.0 || z > d + half {
                        MaskCode::Occluded
                    } else if z < d - half {
                        MaskCode::ObservedEmpty
                    } else {
                        MaskCode::ObservedSurface
                    }
                }
            };
            code as u8 as f64
        })
        .collect();
    Tensor::from_vec(&grid.dims, codes)?.with_dtype(DType::U8)
}

/// Voxels that contribute to the training loss: inside the view and either
/// non-empty or occluded.
pub fn loss_mask(labels: &Tensor, masks: &Tensor) -> Result<Tensor> {
    if labels.shape() != masks.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss mask",
            left: labels.shape().to_vec(),
            right: masks.shape().to_vec(),
        });
    }
    let data = labels
        .data()
        .iter()
        .zip(masks.data())
        .map(|(&l, &m)| {
            let code = MaskCode::from_code(m as u8);
            let keep = code != Some(MaskCode::OutsideView) && (l != 0.0 || code == Some(MaskCode::Occluded));
            if keep {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(labels.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (CameraIntrinsics, VoxelGridSpec) {
        // Camera at the origin looking down +z; a 1×1×4 column of voxels
        // along the optical axis.
        let cam = CameraIntrinsics::identity(2.0, 2.0, 1.0, 1.0);
        let grid = VoxelGridSpec::new([-0.5, -0.5, 0.0], 1.0, [1, 1, 4]).unwrap();
        (cam, grid)
    }

    #[test]
    fn classifies_along_the_ray() {
        let (cam, grid) = setup();
        let depth = Tensor::new(&[3, 3], 1.5).unwrap();
        let m = compute_masks(&depth, &cam, &grid).unwrap();
        // Centres at z = 0.5, 1.5, 2.5, 3.5 against a surface at 1.5.
        let expected = [
            MaskCode::ObservedEmpty,
            MaskCode::ObservedSurface,
            MaskCode::Occluded,
            MaskCode::Occluded,
        ];
        assert_eq!(m.data(), expected.map(|c| c as u8 as f64));
    }

    #[test]
    fn off_image_and_behind_camera_are_outside() {
        let cam = CameraIntrinsics::identity(2.0, 2.0, 1.0, 1.0);
        let grid = VoxelGridSpec::new([5.0, -0.5, -2.0], 1.0, [1, 1, 4]).unwrap();
        let m = compute_masks(&Tensor::new(&[3, 3], 1.0).unwrap(), &cam, &grid).unwrap();
        assert!(m.data().iter().all(|&c| c == MaskCode::OutsideView as u8 as f64));
    }

    #[test]
    fn missing_depth_is_occluded() {
        let (cam, grid) = setup();
        let m = compute_masks(&Tensor::zeros(&[3, 3]).unwrap(), &cam, &grid).unwrap();
        assert!(m.data().iter().all(|&c| c == MaskCode::Occluded as u8 as f64));
    }

    #[test]
    fn loss_mask_rule() {
        let labels = Tensor::from_vec(&[5], vec![0.0, 3.0, 0.0, 0.0, 2.0]).unwrap();
        let codes = [
            MaskCode::ObservedEmpty,
            MaskCode::ObservedSurface,
            MaskCode::Occluded,
            MaskCode::OutsideView,
            MaskCode::OutsideView,
        ];
        let masks = Tensor::from_vec(&[5], codes.iter().map(|&c| c as u8 as f64).collect()).unwrap();
        assert_eq!(loss_mask(&labels, &masks).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0]);
    }
}
