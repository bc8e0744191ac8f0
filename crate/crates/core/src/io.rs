//! Portable volume format.
//!
//! A volume on disk is a pair of files sharing a base path:
//!
//! * `<base>.json` — sidecar: `{"shape":[W,H,Z],"dtype":"f32"|"u8",
//!   "spacing":[sx,sy,sz]?,"class_table":[...]?}`
//! * `<base>.raw` — raw little-endian payload in x-fastest order
//!   (x, then y, then z), `W*H*Z` elements.
//!
//! `f32` volumes are scalar intensities; `u8` volumes are label maps when a
//! `class_table` is present in the sidecar, otherwise binary masks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::volume::{LabelVolume, ScalarVolume, VolumeShape};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    shape: [usize; 3],
    dtype: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing: Option<[f32; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    class_table: Option<Vec<String>>,
}

fn sidecar_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

fn raw_path(base: &Path) -> PathBuf {
    base.with_extension("raw")
}

fn write_pair(base: &Path, sidecar: &Sidecar, raw: &[u8]) -> Result<()> {
    if let Some(parent) = base.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let sp = sidecar_path(base);
    let json = serde_json::to_string_pretty(sidecar)
        .map_err(|e| Error::format(sp.display().to_string(), e.to_string()))?;
    fs::write(&sp, json).map_err(|e| Error::io(sp.display().to_string(), e))?;
    let rp = raw_path(base);
    fs::write(&rp, raw).map_err(|e| Error::io(rp.display().to_string(), e))?;
    Ok(())
}

fn read_sidecar(base: &Path) -> Result<Sidecar> {
    let sp = sidecar_path(base);
    let text = fs::read_to_string(&sp).map_err(|e| Error::io(sp.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(sp.display().to_string(), e.to_string()))
}

fn read_raw(base: &Path, expected: usize) -> Result<Vec<u8>> {
    let rp = raw_path(base);
    let bytes = fs::read(&rp).map_err(|e| Error::io(rp.display().to_string(), e))?;
    if bytes.len() != expected {
        return Err(Error::format(
            rp.display().to_string(),
            format!("raw payload is {} bytes, sidecar shape requires {}", bytes.len(), expected),
        ));
    }
    Ok(bytes)
}

/// Writes a scalar (f32) volume as `<base>.json` + `<base>.raw`.
pub fn write_scalar(base: &Path, vol: &ScalarVolume) -> Result<()> {
    let sidecar = Sidecar {
        shape: vol.shape.as_array(),
        dtype: "f32".into(),
        spacing: vol.spacing,
        class_table: None,
    };
    let mut raw = Vec::with_capacity(vol.data.len() * 4);
    for v in &vol.data {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    write_pair(base, &sidecar, &raw)
}

/// Reads a scalar (f32) volume from `<base>.json` + `<base>.raw`.
pub fn read_scalar(base: &Path) -> Result<ScalarVolume> {
    let sidecar = read_sidecar(base)?;
    if sidecar.dtype != "f32" {
        return Err(Error::format(
            sidecar_path(base).display().to_string(),
            format!("expected dtype f32, found {}", sidecar.dtype),
        ));
    }
    let shape = VolumeShape::new(sidecar.shape[0], sidecar.shape[1], sidecar.shape[2]);
    shape.validate()?;
    let raw = read_raw(base, shape.num_voxels() * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut vol = ScalarVolume::new(shape, data)?;
    vol.spacing = sidecar.spacing;
    Ok(vol)
}

/// Writes a label (u8) volume; the class table rides in the sidecar.
pub fn write_labels(base: &Path, vol: &LabelVolume) -> Result<()> {
    let sidecar = Sidecar {
        shape: vol.shape.as_array(),
        dtype: "u8".into(),
        spacing: None,
        class_table: Some(vol.class_table.clone()),
    };
    write_pair(base, &sidecar, &vol.data)
}

/// Reads a label (u8) volume; the sidecar must carry a class table.
pub fn read_labels(base: &Path) -> Result<LabelVolume> {
    let sidecar = read_sidecar(base)?;
    if sidecar.dtype != "u8" {
        return Err(Error::format(
            sidecar_path(base).display().to_string(),
            format!("expected dtype u8, found {}", sidecar.dtype),
        ));
    }
    let class_table = sidecar.class_table.ok_or_else(|| {
        Error::format(sidecar_path(base).display().to_string(), "label volume requires class_table")
    })?;
    let shape = VolumeShape::new(sidecar.shape[0], sidecar.shape[1], sidecar.shape[2]);
    shape.validate()?;
    let data = read_raw(base, shape.num_voxels())?;
    LabelVolume::new(shape, data, class_table)
}

/// Writes a binary (u8) mask without a class table.
pub fn write_mask(base: &Path, shape: VolumeShape, mask: &[u8]) -> Result<()> {
    if mask.len() != shape.num_voxels() {
        return Err(Error::ShapeMismatch(format!(
            "mask holds {} values, shape {} requires {}",
            mask.len(),
            shape,
            shape.num_voxels()
        )));
    }
    let sidecar =
        Sidecar { shape: shape.as_array(), dtype: "u8".into(), spacing: None, class_table: None };
    write_pair(base, &sidecar, mask)
}

/// Reads a binary (u8) mask.
pub fn read_mask(base: &Path) -> Result<(VolumeShape, Vec<u8>)> {
    let sidecar = read_sidecar(base)?;
    if sidecar.dtype != "u8" {
        return Err(Error::format(
            sidecar_path(base).display().to_string(),
            format!("expected dtype u8, found {}", sidecar.dtype),
        ));
    }
    let shape = VolumeShape::new(sidecar.shape[0], sidecar.shape[1], sidecar.shape[2]);
    shape.validate()?;
    let data = read_raw(base, shape.num_voxels())?;
    Ok((shape, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = VolumeShape::new(3, 4, 2);
        let mut vol =
            ScalarVolume::new(shape, (0..24).map(|_| rng.gen::<f32>()).collect()).unwrap();
        vol.spacing = Some([1.0, 1.0, 2.5]);
        let base = dir.path().join("img");
        write_scalar(&base, &vol).unwrap();
        let back = read_scalar(&base).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let shape = VolumeShape::cube(3);
        let vol = LabelVolume::new(
            shape,
            (0..27).map(|i| (i % 3) as u8).collect(),
            vec!["background".into(), "a".into(), "b".into()],
        )
        .unwrap();
        let base = dir.path().join("seg");
        write_labels(&base, &vol).unwrap();
        assert_eq!(read_labels(&base).unwrap(), vol);
    }

    #[test]
    fn truncated_raw_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("img");
        let vol = ScalarVolume::zeros(VolumeShape::cube(2));
        write_scalar(&base, &vol).unwrap();
        std::fs::write(base.with_extension("raw"), [0u8; 3]).unwrap();
        assert!(matches!(read_scalar(&base), Err(Error::Format { .. })));
    }

    #[test]
    fn serialization_is_x_fastest() {
        // pin the byte order contract: value at (x,y,z) lands at
        // offset 4 * (x + W*(y + H*z))
        let dir = tempfile::tempdir().unwrap();
        let shape = VolumeShape::new(2, 2, 2);
        let mut vol = ScalarVolume::zeros(shape);
        let idx = shape.index(1, 0, 1);
        vol.data[idx] = 42.0;
        let base = dir.path().join("probe");
        write_scalar(&base, &vol).unwrap();
        let raw = std::fs::read(base.with_extension("raw")).unwrap();
        let off = 4 * (1 + 2 * (0 + 2 * 1));
        assert_eq!(f32::from_le_bytes([raw[off], raw[off + 1], raw[off + 2], raw[off + 3]]), 42.0);
    }
}
