//! Dataset assembly: samples, manifests, preprocessing
//! (crop -> resample -> boundary), split management, and phantom dataset
//! synthesis.
//!
//! The boundary target of a sample is always derived from its (final)
//! labels by the morphology module, never resampled: resampling a
//! one-voxel-thick boundary would destroy it, so preprocessing recomputes
//! boundaries after the geometry is settled.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::morphology::{boundary_from_labels, BoundaryTarget, StructuringElement};
use crate::phantom::{generate_phantom, PhantomConfig};
use crate::volume::{BoundingBox, LabelVolume, ScalarVolume, VolumeShape};
use crate::{derive_seed, io, Error, Result};

/// One training/evaluation unit: image, labels, and the boundary target
/// derived from the labels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: ScalarVolume,
    pub labels: LabelVolume,
    pub boundary: BoundaryTarget,
}

impl Sample {
    pub fn shape(&self) -> VolumeShape {
        self.image.shape
    }

    pub fn check_consistent(&self) -> Result<()> {
        if self.image.shape != self.labels.shape || self.labels.shape != self.boundary.shape {
            return Err(Error::ShapeMismatch(format!(
                "sample `{}` grids disagree: image {}, labels {}, boundary {}",
                self.id, self.image.shape, self.labels.shape, self.boundary.shape
            )));
        }
        Ok(())
    }
}

/// Disjoint train/validation/test id lists.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

/// Uniform random partition of `ids` into train/val/test of the given
/// sizes, deterministic per seed. Ids beyond the requested counts are left
/// out (the counts may sum to less than the manifest).
pub fn make_splits(ids: &[String], counts: (usize, usize, usize), seed: u64) -> Result<DatasetSplit> {
    let (n_train, n_val, n_test) = counts;
    let total = n_train + n_val + n_test;
    if total > ids.len() {
        return Err(Error::InvalidArgument(format!(
            "split sizes {n_train}+{n_val}+{n_test} exceed manifest size {}",
            ids.len()
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let train = shuffled[..n_train].to_vec();
    let val = shuffled[n_train..n_train + n_val].to_vec();
    let test = shuffled[n_train + n_val..total].to_vec();
    Ok(DatasetSplit { train, val, test, seed })
}

/// One manifest row: volume paths are relative to the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub labels_path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

/// A dataset manifest is a JSON list of entries.
pub type Manifest = Vec<ManifestEntry>;

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Preprocessing: crop image and labels to `bbox`, resample to `target`
/// (trilinear for the image, nearest-neighbor for labels), then derive the
/// boundary target from the resampled labels. The id is preserved.
pub fn prepare(
    id: &str,
    image: &ScalarVolume,
    labels: &LabelVolume,
    bbox: &BoundingBox,
    target: VolumeShape,
) -> Result<Sample> {
    if image.shape != labels.shape {
        return Err(Error::ShapeMismatch(format!(
            "image {} and labels {} disagree",
            image.shape, labels.shape
        )));
    }
    let image = image.crop(bbox)?.resample(target)?;
    let labels = labels.crop(bbox)?.resample(target)?;
    let boundary = boundary_from_labels(&labels, &StructuringElement::default());
    Ok(Sample { id: id.to_string(), image, labels, boundary })
}

/// Loads every manifest entry into memory (boundaries recomputed from the
/// loaded labels) and returns samples in manifest order.
pub fn load_samples(manifest_path: &Path, manifest: &Manifest) -> Result<Vec<Sample>> {
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let loaded = crate::parallel::map_indexed(manifest.len(), |i| -> Result<Sample> {
        let entry = &manifest[i];
        let image = io::read_scalar(&root.join(&entry.image_path))?;
        let labels = io::read_labels(&root.join(&entry.labels_path))?;
        if image.shape != labels.shape {
            return Err(Error::ShapeMismatch(format!(
                "entry `{}`: image {} vs labels {}",
                entry.id, image.shape, labels.shape
            )));
        }
        let boundary = boundary_from_labels(&labels, &StructuringElement::default());
        Ok(Sample { id: entry.id.clone(), image, labels, boundary })
    });
    loaded.into_iter().collect()
}

/// Generates `count` phantoms (seeds derived from the config seed), writes
/// image/labels/boundary volumes plus `manifest.json` into `dir`, and
/// returns the manifest.
pub fn synth_dataset(cfg: &PhantomConfig, count: usize, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut manifest = Manifest::new();
    for i in 0..count {
        let mut sample_cfg = cfg.clone();
        sample_cfg.seed = derive_seed(cfg.seed, i as u64);
        let mut sample = generate_phantom(&sample_cfg)?;
        sample.id = format!("p{i:04}");
        let image_path = PathBuf::from(format!("{}_image", sample.id));
        let labels_path = PathBuf::from(format!("{}_labels", sample.id));
        let boundary_path = PathBuf::from(format!("{}_boundary", sample.id));
        io::write_scalar(&dir.join(&image_path), &sample.image)?;
        io::write_labels(&dir.join(&labels_path), &sample.labels)?;
        io::write_mask(&dir.join(&boundary_path), sample.boundary.shape, &sample.boundary.mask)?;
        manifest.push(ManifestEntry {
            id: sample.id.clone(),
            image_path,
            labels_path,
            bbox: Some(BoundingBox::full(sample.shape())),
        });
    }
    save_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// In-memory dataset: all samples plus the split assigning them to roles.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub samples: Vec<Sample>,
    pub split: DatasetSplit,
}

impl DatasetBundle {
    pub fn new(samples: Vec<Sample>, split: DatasetSplit) -> Result<Self> {
        for sample in &samples {
            sample.check_consistent()?;
        }
        let bundle = Self { samples, split };
        for id in
            bundle.split.train.iter().chain(&bundle.split.val).chain(&bundle.split.test)
        {
            if bundle.get(id).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "split references unknown sample `{id}`"
                )));
            }
        }
        Ok(bundle)
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    fn select(&self, ids: &[String]) -> Vec<&Sample> {
        ids.iter().map(|id| self.get(id).expect("split ids validated")).collect()
    }

    pub fn train_samples(&self) -> Vec<&Sample> {
        self.select(&self.split.train)
    }

    pub fn val_samples(&self) -> Vec<&Sample> {
        self.select(&self.split.val)
    }

    pub fn test_samples(&self) -> Vec<&Sample> {
        self.select(&self.split.test)
    }

    pub fn num_classes(&self) -> usize {
        self.samples.first().map(|s| s.labels.num_classes()).unwrap_or(0)
    }

    pub fn class_table(&self) -> Vec<String> {
        self.samples.first().map(|s| s.labels.class_table.clone()).unwrap_or_default()
    }

    pub fn shape(&self) -> Option<VolumeShape> {
        self.samples.first().map(|s| s.shape())
    }
}
