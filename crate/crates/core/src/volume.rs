//! Dense 3D volume containers and basic spatial operations.
//!
//! Voxel indexing is `(x, y, z)` with `x` fastest-varying in memory, so the
//! in-memory layout is exactly the serialized layout of the portable volume
//! format. All operations here are pure functions over immutable inputs and
//! are safe to call concurrently.

use serde::{Deserialize, Serialize};

use crate::parallel;
use crate::{Error, Result};

/// Extents of a dense voxel grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VolumeShape {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
}

impl VolumeShape {
    pub fn new(width: usize, height: usize, depth: usize) -> Self {
        Self { width, height, depth }
    }

    /// Cubic shape, `side` voxels per axis.
    pub fn cube(side: usize) -> Self {
        Self::new(side, side, side)
    }

    /// Total voxel count `W * H * Z`.
    pub fn num_voxels(&self) -> usize {
        self.width * self.height * self.depth
    }

    /// Flat index of `(x, y, z)`, x fastest.
    #[inline(always)]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.width * (y + self.height * z)
    }

    /// Inverse of [`VolumeShape::index`].
    #[inline(always)]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.width;
        let rest = idx / self.width;
        (x, rest % self.height, rest / self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.depth == 0 {
            return Err(Error::InvalidArgument(format!(
                "volume shape must be at least 1 per axis, got {}x{}x{}",
                self.width, self.height, self.depth
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.width, self.height, self.depth]
    }
}

impl std::fmt::Display for VolumeShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.depth)
    }
}

/// Inclusive voxel-index bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BoundingBox {
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Self {
        Self { min, max }
    }

    /// Box spanning the whole of `shape`.
    pub fn full(shape: VolumeShape) -> Self {
        Self {
            min: [0, 0, 0],
            max: [shape.width - 1, shape.height - 1, shape.depth - 1],
        }
    }

    /// Output extents per axis (inclusive bounds).
    pub fn extents(&self) -> VolumeShape {
        VolumeShape::new(
            self.max[0] - self.min[0] + 1,
            self.max[1] - self.min[1] + 1,
            self.max[2] - self.min[2] + 1,
        )
    }

    pub fn check_within(&self, shape: VolumeShape) -> Result<()> {
        let dims = shape.as_array();
        for axis in 0..3 {
            if self.min[axis] > self.max[axis] {
                return Err(Error::BoxOutOfRange(format!(
                    "min {} > max {} on axis {}",
                    self.min[axis], self.max[axis], AXIS_NAMES[axis]
                )));
            }
            if self.max[axis] >= dims[axis] {
                return Err(Error::BoxOutOfRange(format!(
                    "max {} exceeds extent {} on axis {}",
                    self.max[axis], dims[axis], AXIS_NAMES[axis]
                )));
            }
        }
        Ok(())
    }
}

pub(crate) const AXIS_NAMES: [char; 3] = ['x', 'y', 'z'];

/// Dense grid of real intensities (e.g. a CT image).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    pub shape: VolumeShape,
    pub data: Vec<f32>,
    /// Optional physical voxel size per axis (mm). Paper-facing computations
    /// default to voxel units; spacing only scales reported distances.
    pub spacing: Option<[f32; 3]>,
}

impl ScalarVolume {
    pub fn new(shape: VolumeShape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.num_voxels() {
            return Err(Error::ShapeMismatch(format!(
                "scalar volume holds {} values, shape {} requires {}",
                data.len(),
                shape,
                shape.num_voxels()
            )));
        }
        Ok(Self { shape, data, spacing: None })
    }

    pub fn zeros(shape: VolumeShape) -> Self {
        Self { shape, data: vec![0.0; shape.num_voxels()], spacing: None }
    }

    #[inline(always)]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.shape.index(x, y, z)]
    }

    /// Copies the voxels inside `bbox` into a new volume.
    pub fn crop(&self, bbox: &BoundingBox) -> Result<Self> {
        bbox.check_within(self.shape)?;
        let data = crop_grid(&self.data, self.shape, bbox);
        Ok(Self { shape: bbox.extents(), data, spacing: self.spacing })
    }

    /// Trilinear resampling to `target`, voxel centers aligned
    /// (half-pixel convention, clamped at the edges).
    pub fn resample(&self, target: VolumeShape) -> Result<Self> {
        target.validate()?;
        let src = self.shape;
        let map_x = axis_map(src.width, target.width);
        let map_y = axis_map(src.height, target.height);
        let map_z = axis_map(src.depth, target.depth);
        let mut out = vec![0.0f32; target.num_voxels()];
        let plane = target.width * target.height;
        let data = &self.data;
        parallel::for_each_chunk_mut(&mut out, plane, |z, slab| {
            let (z0, z1, fz) = map_z[z];
            for y in 0..target.height {
                let (y0, y1, fy) = map_y[y];
                for x in 0..target.width {
                    let (x0, x1, fx) = map_x[x];
                    let fetch = |xx: usize, yy: usize, zz: usize| data[src.index(xx, yy, zz)];
                    let c00 = lerp(fetch(x0, y0, z0), fetch(x1, y0, z0), fx);
                    let c10 = lerp(fetch(x0, y1, z0), fetch(x1, y1, z0), fx);
                    let c01 = lerp(fetch(x0, y0, z1), fetch(x1, y0, z1), fx);
                    let c11 = lerp(fetch(x0, y1, z1), fetch(x1, y1, z1), fx);
                    let c0 = lerp(c00, c10, fy);
                    let c1 = lerp(c01, c11, fy);
                    slab[y * target.width + x] = lerp(c0, c1, fz);
                }
            }
        });
        Ok(Self { shape: target, data: out, spacing: self.spacing })
    }
}

#[inline(always)]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Source sampling positions for one axis under the half-pixel convention:
/// `s = (i + 0.5) * src/dst - 0.5`, clamped to `[0, src-1]`.
/// Returns `(floor, ceil, frac)` per destination index.
fn axis_map(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect()
}

fn crop_grid<T: Copy + Send + Sync>(data: &[T], shape: VolumeShape, bbox: &BoundingBox) -> Vec<T> {
    let out_shape = bbox.extents();
    let mut out = Vec::with_capacity(out_shape.num_voxels());
    for z in bbox.min[2]..=bbox.max[2] {
        for y in bbox.min[1]..=bbox.max[1] {
            let row = shape.index(bbox.min[0], y, z);
            out.extend_from_slice(&data[row..row + out_shape.width]);
        }
    }
    out
}

/// Dense grid of class indices with an ordered class table
/// (index 0 = background).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVolume {
    pub shape: VolumeShape,
    pub data: Vec<u8>,
    pub class_table: Vec<String>,
}

impl LabelVolume {
    pub fn new(shape: VolumeShape, data: Vec<u8>, class_table: Vec<String>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.num_voxels() {
            return Err(Error::ShapeMismatch(format!(
                "label volume holds {} values, shape {} requires {}",
                data.len(),
                shape,
                shape.num_voxels()
            )));
        }
        if class_table.is_empty() {
            return Err(Error::InvalidArgument("class table must not be empty".into()));
        }
        let classes = class_table.len();
        if let Some(bad) = data.iter().find(|&&l| (l as usize) >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self { shape, data, class_table })
    }

    /// Number of classes `C` including background.
    pub fn num_classes(&self) -> usize {
        self.class_table.len()
    }

    #[inline(always)]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.shape.index(x, y, z)]
    }

    /// Binary mask (0/1) of one class.
    pub fn class_mask(&self, class: usize) -> Vec<u8> {
        self.data.iter().map(|&l| (l as usize == class) as u8).collect()
    }

    pub fn crop(&self, bbox: &BoundingBox) -> Result<Self> {
        bbox.check_within(self.shape)?;
        let data = crop_grid(&self.data, self.shape, bbox);
        Ok(Self { shape: bbox.extents(), data, class_table: self.class_table.clone() })
    }

    /// Nearest-neighbor resampling to `target`; the output label set is a
    /// subset of the input label set.
    pub fn resample(&self, target: VolumeShape) -> Result<Self> {
        target.validate()?;
        let src = self.shape;
        let nx = nearest_map(src.width, target.width);
        let ny = nearest_map(src.height, target.height);
        let nz = nearest_map(src.depth, target.depth);
        let mut out = vec![0u8; target.num_voxels()];
        let plane = target.width * target.height;
        let data = &self.data;
        parallel::for_each_chunk_mut(&mut out, plane, |z, slab| {
            let sz = nz[z];
            for y in 0..target.height {
                let sy = ny[y];
                let row = src.index(0, sy, sz);
                for x in 0..target.width {
                    slab[y * target.width + x] = data[row + nx[x]];
                }
            }
        });
        Ok(Self { shape: target, data: out, class_table: self.class_table.clone() })
    }
}

fn nearest_map(src: usize, dst: usize) -> Vec<usize> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            (s.round() as usize).min(src - 1)
        })
        .collect()
}

/// One binary channel per class; exactly one channel is set per voxel.
/// Channels are stored channel-major as f32 so loss code can consume them
/// directly.
#[derive(Clone, Debug, PartialEq)]
pub struct OneHotVolume {
    pub shape: VolumeShape,
    pub classes: usize,
    pub data: Vec<f32>,
}

impl OneHotVolume {
    /// Channel `c` as a flat slice.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.shape.num_voxels();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Per-voxel class encoding: channel `c` of voxel `v` is 1 iff
/// `labels(v) = c`.
pub fn one_hot(labels: &LabelVolume) -> OneHotVolume {
    let n = labels.shape.num_voxels();
    let classes = labels.num_classes();
    let mut data = vec![0.0f32; classes * n];
    let src = &labels.data;
    parallel::for_each_chunk_mut(&mut data, n, |c, channel| {
        for (out, &l) in channel.iter_mut().zip(src.iter()) {
            *out = (l as usize == c) as u8 as f32;
        }
    });
    OneHotVolume { shape: labels.shape, classes, data }
}

/// Softmax output of a segmentation model: `classes` region channels that
/// sum to 1 per voxel, plus an optional boundary-probability channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub shape: VolumeShape,
    pub classes: usize,
    /// Channel-major region probabilities, `classes * num_voxels` values.
    pub region: Vec<f32>,
    /// Boundary probability per voxel, when the model predicts boundaries.
    pub boundary: Option<Vec<f32>>,
}

impl ProbabilityMap {
    pub fn new(shape: VolumeShape, classes: usize, region: Vec<f32>) -> Result<Self> {
        if region.len() != classes * shape.num_voxels() {
            return Err(Error::ShapeMismatch(format!(
                "probability map holds {} values, expected {} ({} classes over {})",
                region.len(),
                classes * shape.num_voxels(),
                classes,
                shape
            )));
        }
        Ok(Self { shape, classes, region, boundary: None })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.shape.num_voxels();
        &self.region[c * n..(c + 1) * n]
    }
}

/// Per-voxel class of maximal probability; ties break to the lowest class
/// index so results are deterministic.
pub fn argmax_labels(prob: &ProbabilityMap, class_table: &[String]) -> Result<LabelVolume> {
    if class_table.len() != prob.classes {
        return Err(Error::ShapeMismatch(format!(
            "class table has {} entries, probability map has {} channels",
            class_table.len(),
            prob.classes
        )));
    }
    let n = prob.shape.num_voxels();
    let region = &prob.region;
    let mut out = vec![0u8; n];
    parallel::for_each_chunk_mut(&mut out, parallel::SUM_CHUNK, |chunk, slab| {
        let base = chunk * parallel::SUM_CHUNK;
        for (j, lab) in slab.iter_mut().enumerate() {
            let v = base + j;
            let mut best = 0usize;
            let mut best_p = region[v];
            for c in 1..prob.classes {
                let p = region[c * n + v];
                if p > best_p {
                    best_p = p;
                    best = c;
                }
            }
            *lab = best as u8;
        }
    });
    LabelVolume::new(prob.shape, out, class_table.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| if i == 0 { "background".into() } else { format!("organ{i}") }).collect()
    }

    fn random_labels(shape: VolumeShape, classes: usize, seed: u64) -> LabelVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.num_voxels()).map(|_| rng.gen_range(0..classes) as u8).collect();
        LabelVolume::new(shape, data, names(classes)).unwrap()
    }

    #[test]
    fn one_hot_all_background() {
        let labels =
            LabelVolume::new(VolumeShape::cube(2), vec![0; 8], names(2)).unwrap();
        let oh = one_hot(&labels);
        assert!(oh.channel(0).iter().all(|&v| v == 1.0));
        assert!(oh.channel(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_single_voxel() {
        let labels = LabelVolume::new(VolumeShape::new(1, 1, 1), vec![3], names(4)).unwrap();
        let oh = one_hot(&labels);
        for c in 0..4 {
            assert_eq!(oh.channel(c)[0], if c == 3 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn one_hot_round_trip_matches_loop_oracle() {
        let labels = random_labels(VolumeShape::cube(4), 9, 17);
        let oh = one_hot(&labels);
        // voxel-wise loop oracle: argmax of the one-hot encoding recovers labels
        for v in 0..labels.shape.num_voxels() {
            let mut arg = 0;
            for c in 0..9 {
                if oh.channel(c)[v] > oh.channel(arg)[v] {
                    arg = c;
                }
            }
            assert_eq!(arg as u8, labels.data[v]);
            let s: f32 = (0..9).map(|c| oh.channel(c)[v]).sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn crop_full_volume_is_identity() {
        let labels = random_labels(VolumeShape::new(3, 4, 5), 3, 5);
        let out = labels.crop(&BoundingBox::full(labels.shape)).unwrap();
        assert_eq!(out, labels);
    }

    #[test]
    fn crop_single_voxel() {
        let labels = random_labels(VolumeShape::cube(3), 4, 7);
        let b = BoundingBox::new([1, 2, 0], [1, 2, 0]);
        let out = labels.crop(&b).unwrap();
        assert_eq!(out.shape, VolumeShape::cube(1));
        assert_eq!(out.data[0], labels.at(1, 2, 0));
    }

    #[test]
    fn crop_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let shape = VolumeShape::cube(5);
        let data: Vec<f32> = (0..shape.num_voxels()).map(|_| rng.gen()).collect();
        let vol = ScalarVolume::new(shape, data).unwrap();
        let b = BoundingBox::new([1, 1, 1], [3, 3, 3]);
        let out = vol.crop(&b).unwrap();
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    assert_eq!(out.at(x, y, z), vol.at(x + 1, y + 1, z + 1));
                }
            }
        }
    }

    #[test]
    fn crop_out_of_bounds_is_range_error() {
        let labels = random_labels(VolumeShape::cube(3), 2, 1);
        let b = BoundingBox::new([0, 0, 0], [3, 2, 2]);
        assert!(matches!(labels.crop(&b), Err(Error::BoxOutOfRange(_))));
    }

    #[test]
    fn nested_crops_compose() {
        let labels = random_labels(VolumeShape::cube(6), 5, 11);
        let outer = BoundingBox::new([1, 0, 2], [5, 4, 5]);
        let inner = BoundingBox::new([1, 1, 0], [3, 3, 2]);
        let two_step = labels.crop(&outer).unwrap().crop(&inner).unwrap();
        let composed = BoundingBox::new(
            [outer.min[0] + inner.min[0], outer.min[1] + inner.min[1], outer.min[2] + inner.min[2]],
            [outer.min[0] + inner.max[0], outer.min[1] + inner.max[1], outer.min[2] + inner.max[2]],
        );
        assert_eq!(two_step, labels.crop(&composed).unwrap());
    }

    #[test]
    fn resample_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = VolumeShape::cube(4);
        let data: Vec<f32> = (0..shape.num_voxels()).map(|_| rng.gen()).collect();
        let vol = ScalarVolume::new(shape, data).unwrap();
        let out = vol.resample(shape).unwrap();
        for (a, b) in out.data.iter().zip(vol.data.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let labels = random_labels(shape, 4, 4);
        assert_eq!(labels.resample(shape).unwrap(), labels);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let vol = ScalarVolume::new(VolumeShape::cube(3), vec![2.5; 27]).unwrap();
        let out = vol.resample(VolumeShape::new(7, 5, 2)).unwrap();
        assert!(out.data.iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn label_resample_is_subset_and_matches_index_oracle() {
        let labels = random_labels(VolumeShape::cube(4), 5, 9);
        let target = VolumeShape::cube(7);
        let out = labels.resample(target).unwrap();
        let input_set: std::collections::BTreeSet<u8> = labels.data.iter().copied().collect();
        assert!(out.data.iter().all(|l| input_set.contains(l)));
        // nearest-neighbor index-mapping oracle
        for z in 0..7 {
            for y in 0..7 {
                for x in 0..7 {
                    let m = |i: usize| -> usize {
                        let s = ((i as f64 + 0.5) * 4.0 / 7.0 - 0.5).clamp(0.0, 3.0);
                        s.round() as usize
                    };
                    assert_eq!(out.at(x, y, z), labels.at(m(x), m(y), m(z)));
                }
            }
        }
    }

    #[test]
    fn argmax_recovers_one_hot() {
        let labels = random_labels(VolumeShape::cube(3), 3, 13);
        let oh = one_hot(&labels);
        let prob = ProbabilityMap::new(labels.shape, 3, oh.data.clone()).unwrap();
        let rec = argmax_labels(&prob, &labels.class_table).unwrap();
        assert_eq!(rec.data, labels.data);
    }

    #[test]
    fn argmax_uniform_ties_to_background() {
        let shape = VolumeShape::cube(2);
        let prob = ProbabilityMap::new(shape, 3, vec![1.0 / 3.0; 3 * 8]).unwrap();
        let out = argmax_labels(&prob, &names(3)).unwrap();
        assert!(out.data.iter().all(|&l| l == 0));
    }

    #[test]
    fn argmax_matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let shape = VolumeShape::cube(3);
        let n = shape.num_voxels();
        let region: Vec<f32> = (0..3 * n).map(|_| rng.gen()).collect();
        let prob = ProbabilityMap::new(shape, 3, region).unwrap();
        let out = argmax_labels(&prob, &names(3)).unwrap();
        for v in 0..n {
            let mut best = 0usize;
            for c in 1..3 {
                if prob.region[c * n + v] > prob.region[best * n + v] {
                    best = c;
                }
            }
            assert_eq!(out.data[v], best as u8);
        }
    }

    #[test]
    fn argmax_invariant_under_monotone_rescale() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let shape = VolumeShape::cube(3);
        let n = shape.num_voxels();
        let region: Vec<f32> = (0..4 * n).map(|_| rng.gen()).collect();
        let prob = ProbabilityMap::new(shape, 4, region.clone()).unwrap();
        let scaled: Vec<f32> = region.iter().map(|&p| (3.0 * p).exp()).collect();
        let prob2 = ProbabilityMap::new(shape, 4, scaled).unwrap();
        assert_eq!(
            argmax_labels(&prob, &names(4)).unwrap().data,
            argmax_labels(&prob2, &names(4)).unwrap().data
        );
    }
}
