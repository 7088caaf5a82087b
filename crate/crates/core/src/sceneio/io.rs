use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SceneSample;
use crate::error::{Error, Result};
use crate::projection::CameraIntrinsics;
use crate::tensor::{DType, Tensor};

pub fn write_sample(dir: &Path, sample: &SceneSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    sample.rgb.save(&dir.join("rgb.tnsr"))?;
    sample.depth.save(&dir.join("depth.tnsr"))?;
    sample
        .labels
        .clone()
        .with_dtype(DType::I32)?
        .save(&dir.join("labels.tnsr"))?;
    sample
        .masks
        .clone()
        .with_dtype(DType::U8)?
        .save(&dir.join("masks.tnsr"))?;
    sample.intrinsics.save(&dir.join("intrinsics.json"))
}

pub fn read_sample(dir: &Path) -> Result<SceneSample> {
    let sample = SceneSample {
        rgb: Tensor::load(&dir.join("rgb.tnsr"))?,
        depth: Tensor::load(&dir.join("depth.tnsr"))?,
        intrinsics: CameraIntrinsics::load(&dir.join("intrinsics.json"))?,
        labels: Tensor::load(&dir.join("labels.tnsr"))?,
        masks: Tensor::load(&dir.join("masks.tnsr"))?,
    };
    let hw = sample.depth.shape();
    if hw.len() != 2 || sample.rgb.shape() != [3, hw[0], hw[1]] {
        return Err(Error::Shape(format!(
            "{}: rgb {:?} does not match depth {:?}",
            dir.display(),
            sample.rgb.shape(),
            hw
        )));
    }
    if sample.labels.shape() != sample.masks.shape() || sample.labels.ndim() != 3 {
        return Err(Error::Shape(format!(
            "{}: labels {:?} and masks {:?} must be equal 3-D grids",
            dir.display(),
            sample.labels.shape(),
            sample.masks.shape()
        )));
    }
    Ok(sample)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Directory relative to the manifest.
    pub dir: String,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn dirs(&self, root: &Path, split: Option<Split>) -> Vec<PathBuf> {
        self.samples
            .iter()
            .filter(|e| split.is_none_or(|s| s == e.split))
            .map(|e| root.join(&e.dir))
            .collect()
    }
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sceneio::{generate_scene, GenConfig};

    #[test]
    fn sample_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_scene(3, &GenConfig::default()).unwrap();
        write_sample(dir.path(), &s).unwrap();
        let r = read_sample(dir.path()).unwrap();
        assert_eq!(r, s);
        assert_eq!(r.labels.dtype(), DType::I32);
        assert_eq!(r.masks.dtype(), DType::U8);
    }

    #[test]
    fn truncated_and_foreign_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_scene(4, &GenConfig::default()).unwrap();
        write_sample(dir.path(), &s).unwrap();
        let path = dir.path().join("depth.tnsr");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_sample(dir.path()), Err(Error::Format { .. })));

        let mut swapped = bytes.clone();
        swapped[..4].reverse();
        fs::write(&path, &swapped).unwrap();
        assert!(matches!(read_sample(dir.path()), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn manifest_round_trip_and_split_filter() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            samples: vec![
                ManifestEntry {
                    dir: "s0".into(),
                    split: Split::Train,
                    seed: 0,
                },
                ManifestEntry {
                    dir: "s1".into(),
                    split: Split::Test,
                    seed: 1,
                },
            ],
        };
        write_manifest(dir.path(), &m).unwrap();
        let r = read_manifest(dir.path()).unwrap();
        assert_eq!(r, m);
        assert_eq!(r.dirs(dir.path(), Some(Split::Test)), vec![dir.path().join("s1")]);
        assert_eq!(r.dirs(dir.path(), None).len(), 2);
    }
}
