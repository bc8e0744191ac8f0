//! 3D binary morphology: erosion, boundary ground-truth extraction, exact
//! Euclidean distance transforms, and trimap bands around organ boundaries.
//!
//! Masks are flat `u8` grids (0/1) in the same x-fastest layout as
//! [`crate::volume`]. Voxels outside the volume count as background, so an
//! organ touching the crop border still produces boundary voxels there.

use serde::{Deserialize, Serialize};

use crate::parallel;
use crate::volume::{LabelVolume, VolumeShape};
use crate::{Error, Result};

/// Neighborhood kind for the structuring element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbors (Manhattan ball).
    #[serde(rename = "6")]
    Six,
    /// Face, edge and corner neighbors (Chebyshev ball).
    #[serde(rename = "26")]
    TwentySix,
}

/// Erosion kernel: connectivity plus radius in voxels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub connectivity: Connectivity,
    pub radius: usize,
}

impl StructuringElement {
    pub fn new(connectivity: Connectivity, radius: usize) -> Result<Self> {
        if radius < 1 {
            return Err(Error::InvalidArgument("structuring element radius must be >= 1".into()));
        }
        Ok(Self { connectivity, radius })
    }

    /// Nonzero neighbor offsets covered by the element.
    pub fn offsets(&self) -> Vec<(i32, i32, i32)> {
        let r = self.radius as i32;
        let mut out = Vec::new();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let keep = match self.connectivity {
                        Connectivity::TwentySix => true,
                        Connectivity::Six => dx.abs() + dy.abs() + dz.abs() <= r,
                    };
                    if keep {
                        out.push((dx, dy, dz));
                    }
                }
            }
        }
        out
    }
}

impl Default for StructuringElement {
    /// One-voxel-thick boundaries: 26-connectivity, radius 1.
    fn default() -> Self {
        Self { connectivity: Connectivity::TwentySix, radius: 1 }
    }
}

/// Binary mask of ground-truth organ boundary voxels.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTarget {
    pub shape: VolumeShape,
    pub mask: Vec<u8>,
}

impl BoundaryTarget {
    pub fn num_boundary_voxels(&self) -> usize {
        self.mask.iter().filter(|&&v| v != 0).count()
    }
}

/// Narrow band of voxels around a boundary set.
#[derive(Clone, Debug, PartialEq)]
pub struct TrimapBand {
    pub shape: VolumeShape,
    pub mask: Vec<u8>,
    pub width: usize,
}

/// Morphological erosion: a voxel survives iff it is foreground and every
/// structuring-element neighbor (outside-volume treated as background) is
/// foreground.
pub fn erode(mask: &[u8], shape: VolumeShape, se: &StructuringElement) -> Vec<u8> {
    debug_assert_eq!(mask.len(), shape.num_voxels());
    let offsets = se.offsets();
    let (w, h, d) = (shape.width as i32, shape.height as i32, shape.depth as i32);
    let plane = shape.width * shape.height;
    let mut out = vec![0u8; mask.len()];
    parallel::for_each_chunk_mut(&mut out, plane, |z, slab| {
        let z = z as i32;
        for y in 0..h {
            for x in 0..w {
                let idx = (y * w + x) as usize;
                if mask[shape.index(x as usize, y as usize, z as usize)] == 0 {
                    continue;
                }
                let mut survives = true;
                for &(dx, dy, dz) in &offsets {
                    let (nx, ny, nz) = (x + dx, y + dy, z + dz);
                    if nx < 0 || ny < 0 || nz < 0 || nx >= w || ny >= h || nz >= d {
                        survives = false;
                        break;
                    }
                    if mask[shape.index(nx as usize, ny as usize, nz as usize)] == 0 {
                        survives = false;
                        break;
                    }
                }
                slab[idx] = survives as u8;
            }
        }
    });
    out
}

/// Boundary ground truth: per foreground class, erode the class mask and
/// subtract it from the original; the union over classes is the (binary)
/// boundary target.
pub fn boundary_from_labels(labels: &LabelVolume, se: &StructuringElement) -> BoundaryTarget {
    let shape = labels.shape;
    let mut boundary = vec![0u8; shape.num_voxels()];
    for class in 1..labels.num_classes() {
        let mask = labels.class_mask(class);
        if mask.iter().all(|&v| v == 0) {
            continue;
        }
        let eroded = erode(&mask, shape, se);
        for ((b, m), e) in boundary.iter_mut().zip(&mask).zip(&eroded) {
            *b |= m & !e & 1;
        }
    }
    BoundaryTarget { shape, mask: boundary }
}

/// Exact squared Euclidean distance to the nearest set voxel, per voxel.
///
/// Separable lower-envelope transform; results are exact integers carried in
/// f64.
pub(crate) fn edt_squared(mask: &[u8], shape: VolumeShape) -> Result<Vec<f64>> {
    if mask.iter().all(|&v| v == 0) {
        return Err(Error::EmptyMask);
    }
    const INF: f64 = 1e20;
    let (w, h, d) = (shape.width, shape.height, shape.depth);
    let mut f: Vec<f64> = mask.iter().map(|&v| if v != 0 { 0.0 } else { INF }).collect();

    // pass along x: rows are contiguous
    parallel::for_each_chunk_mut(&mut f, w, |_, row| {
        dt1d_in_place(row, 1);
    });

    // pass along y: columns within each z-plane
    let plane = w * h;
    parallel::for_each_chunk_mut(&mut f, plane, |_, slab| {
        for x in 0..w {
            dt1d_in_place(&mut slab[x..], w);
        }
    });

    // pass along z: permute to z-fastest, transform contiguous rows, permute back
    let mut zfast = vec![0.0f64; f.len()];
    {
        let fr = &f;
        parallel::for_each_chunk_mut(&mut zfast, d, |col, row| {
            let x = col % w;
            let y = col / w;
            for (z, v) in row.iter_mut().enumerate() {
                *v = fr[x + w * (y + h * z)];
            }
            dt1d_in_place(row, 1);
        });
    }
    {
        let zr = &zfast;
        parallel::for_each_chunk_mut(&mut f, plane, |z, slab| {
            for y in 0..h {
                for x in 0..w {
                    slab[y * w + x] = zr[z + d * (x + w * y)];
                }
            }
        });
    }
    Ok(f)
}

/// 1D squared-distance transform over `data[0], data[stride], ...`
/// (lower envelope of parabolas).
fn dt1d_in_place(data: &mut [f64], stride: usize) {
    let n = (data.len() + stride - 1) / stride;
    if n <= 1 {
        return;
    }
    let f: Vec<f64> = (0..n).map(|i| data[i * stride]).collect();
    let intersect = |q: usize, fq: f64, p: usize| -> f64 {
        (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let mut k = 0usize;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s = intersect(q, fq, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, fq, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        data[q * stride] = dq * dq + f[p];
    }
}

/// Exact Euclidean distance (voxel units) to the nearest set voxel.
///
/// An empty mask has no finite distances and is reported as
/// [`Error::EmptyMask`].
pub fn distance_transform(mask: &[u8], shape: VolumeShape) -> Result<Vec<f32>> {
    let sq = edt_squared(mask, shape)?;
    Ok(sq.into_iter().map(|d| d.sqrt() as f32).collect())
}

/// Band of voxels whose Euclidean distance to the ground-truth boundary set
/// is at most `width / 2`, symmetric across the boundary.
pub fn trimap_band(labels: &LabelVolume, width: usize) -> Result<TrimapBand> {
    if width < 1 {
        return Err(Error::InvalidArgument("trimap width must be >= 1".into()));
    }
    let boundary = boundary_from_labels(labels, &StructuringElement::default());
    band_around(&boundary, width)
}

/// Band of voxels within `width / 2` of an explicit boundary set. An empty
/// boundary yields an empty band.
pub fn band_around(boundary: &BoundaryTarget, width: usize) -> Result<TrimapBand> {
    if width < 1 {
        return Err(Error::InvalidArgument("trimap width must be >= 1".into()));
    }
    let shape = boundary.shape;
    if boundary.mask.iter().all(|&v| v == 0) {
        return Ok(TrimapBand { shape, mask: vec![0u8; shape.num_voxels()], width });
    }
    let sq = edt_squared(&boundary.mask, shape)?;
    let limit = (width as f64 / 2.0) * (width as f64 / 2.0);
    let mask = sq.into_iter().map(|d| (d <= limit) as u8).collect();
    Ok(TrimapBand { shape, mask, width })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn label_volume(shape: VolumeShape, data: Vec<u8>, classes: usize) -> LabelVolume {
        let names = (0..classes)
            .map(|i| if i == 0 { "background".to_string() } else { format!("organ{i}") })
            .collect();
        LabelVolume::new(shape, data, names).unwrap()
    }

    /// Brute-force erosion: direct neighbor scan per voxel.
    fn erode_oracle(mask: &[u8], shape: VolumeShape, se: &StructuringElement) -> Vec<u8> {
        let r = se.radius as i32;
        let mut out = vec![0u8; mask.len()];
        for z in 0..shape.depth as i32 {
            for y in 0..shape.height as i32 {
                'voxel: for x in 0..shape.width as i32 {
                    let idx = shape.index(x as usize, y as usize, z as usize);
                    if mask[idx] == 0 {
                        continue;
                    }
                    for dz in -r..=r {
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let inside = match se.connectivity {
                                    Connectivity::TwentySix => true,
                                    Connectivity::Six => dx.abs() + dy.abs() + dz.abs() <= r,
                                };
                                if !inside {
                                    continue;
                                }
                                let (nx, ny, nz) = (x + dx, y + dy, z + dz);
                                let fg = nx >= 0
                                    && ny >= 0
                                    && nz >= 0
                                    && nx < shape.width as i32
                                    && ny < shape.height as i32
                                    && nz < shape.depth as i32
                                    && mask[shape.index(nx as usize, ny as usize, nz as usize)]
                                        != 0;
                                if !fg {
                                    continue 'voxel;
                                }
                            }
                        }
                    }
                    out[idx] = 1;
                }
            }
        }
        out
    }

    /// All-pairs minimum distance oracle (squared, exact integers).
    fn edt_oracle(mask: &[u8], shape: VolumeShape) -> Vec<f64> {
        let set: Vec<(i64, i64, i64)> = (0..mask.len())
            .filter(|&i| mask[i] != 0)
            .map(|i| {
                let (x, y, z) = shape.coords(i);
                (x as i64, y as i64, z as i64)
            })
            .collect();
        (0..mask.len())
            .map(|i| {
                let (x, y, z) = shape.coords(i);
                set.iter()
                    .map(|&(sx, sy, sz)| {
                        let (dx, dy, dz) = (x as i64 - sx, y as i64 - sy, z as i64 - sz);
                        (dx * dx + dy * dy + dz * dz) as f64
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn erode_full_cube_keeps_center_only() {
        let shape = VolumeShape::cube(3);
        let out = erode(&vec![1u8; 27], shape, &StructuringElement::default());
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, (i == shape.index(1, 1, 1)) as u8);
        }
    }

    #[test]
    fn erode_empty_stays_empty() {
        let shape = VolumeShape::cube(4);
        let out = erode(&vec![0u8; 64], shape, &StructuringElement::default());
        assert!(out.iter().all(|&v| v == 0));
    }

    #[test]
    fn erode_matches_neighbor_scan_oracle_six_conn() {
        let shape = VolumeShape::cube(5);
        let se = StructuringElement::new(Connectivity::Six, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mask: Vec<u8> = (0..shape.num_voxels()).map(|_| rng.gen_bool(0.6) as u8).collect();
        assert_eq!(erode(&mask, shape, &se), erode_oracle(&mask, shape, &se));
    }

    #[test]
    fn boundary_of_uniform_volume_is_empty() {
        let labels = label_volume(VolumeShape::cube(4), vec![0; 64], 2);
        let b = boundary_from_labels(&labels, &StructuringElement::default());
        assert_eq!(b.num_boundary_voxels(), 0);
    }

    #[test]
    fn boundary_of_solid_cube_is_shell() {
        // 3^3 cube of one class centered in a 5^3 volume: erosion keeps only
        // the cube center, so the boundary is the 26-voxel shell.
        let shape = VolumeShape::cube(5);
        let mut data = vec![0u8; shape.num_voxels()];
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    data[shape.index(x, y, z)] = 1;
                }
            }
        }
        let labels = label_volume(shape, data, 2);
        let b = boundary_from_labels(&labels, &StructuringElement::default());
        assert_eq!(b.num_boundary_voxels(), 26);
        assert_eq!(b.mask[shape.index(2, 2, 2)], 0);
    }

    #[test]
    fn boundary_matches_per_class_oracle() {
        // two adjacent organ blocks
        let shape = VolumeShape::new(6, 4, 4);
        let mut data = vec![0u8; shape.num_voxels()];
        for z in 0..4 {
            for y in 0..4 {
                for x in 0..3 {
                    data[shape.index(x, y, z)] = 1;
                }
                for x in 3..6 {
                    data[shape.index(x, y, z)] = 2;
                }
            }
        }
        let labels = label_volume(shape, data, 3);
        let se = StructuringElement::default();
        let got = boundary_from_labels(&labels, &se);
        let mut expect = vec![0u8; shape.num_voxels()];
        for class in 1..3 {
            let mask = labels.class_mask(class);
            let er = erode_oracle(&mask, shape, &se);
            for i in 0..expect.len() {
                expect[i] |= mask[i] & !er[i] & 1;
            }
        }
        assert_eq!(got.mask, expect);
    }

    #[test]
    fn trimap_width_one_is_boundary_itself() {
        let shape = VolumeShape::cube(7);
        let mut data = vec![0u8; shape.num_voxels()];
        for z in 2..5 {
            for y in 2..5 {
                for x in 2..5 {
                    data[shape.index(x, y, z)] = 1;
                }
            }
        }
        let labels = label_volume(shape, data, 2);
        let band = trimap_band(&labels, 1).unwrap();
        let boundary = boundary_from_labels(&labels, &StructuringElement::default());
        assert_eq!(band.mask, boundary.mask);
    }

    #[test]
    fn trimap_of_uniform_volume_is_empty() {
        let labels = label_volume(VolumeShape::cube(4), vec![0; 64], 3);
        let band = trimap_band(&labels, 5).unwrap();
        assert!(band.mask.iter().all(|&v| v == 0));
    }

    #[test]
    fn trimap_rejects_zero_width() {
        let labels = label_volume(VolumeShape::cube(2), vec![0; 8], 2);
        assert!(matches!(trimap_band(&labels, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn trimap_matches_distance_scan_oracle() {
        let shape = VolumeShape::cube(7);
        let mut data = vec![0u8; shape.num_voxels()];
        for z in 2..5 {
            for y in 2..5 {
                for x in 2..5 {
                    data[shape.index(x, y, z)] = 1;
                }
            }
        }
        let labels = label_volume(shape, data, 2);
        let width = 5;
        let band = trimap_band(&labels, width).unwrap();
        let boundary = boundary_from_labels(&labels, &StructuringElement::default());
        let sq = edt_oracle(&boundary.mask, shape);
        let limit = (width as f64 / 2.0).powi(2);
        let expect: Vec<u8> = sq.iter().map(|&d| (d <= limit) as u8).collect();
        assert_eq!(band.mask, expect);
    }

    #[test]
    fn distance_zero_at_mask_voxels_and_345_triangle() {
        let shape = VolumeShape::new(4, 5, 1);
        let mut mask = vec![0u8; shape.num_voxels()];
        mask[shape.index(0, 0, 0)] = 1;
        let d = distance_transform(&mask, shape).unwrap();
        assert_eq!(d[shape.index(0, 0, 0)], 0.0);
        assert_eq!(d[shape.index(3, 4, 0)], 5.0);
    }

    #[test]
    fn distance_transform_of_empty_mask_is_distinct_error() {
        let shape = VolumeShape::cube(3);
        assert!(matches!(distance_transform(&vec![0u8; 27], shape), Err(Error::EmptyMask)));
    }

    #[test]
    fn distance_matches_all_pairs_oracle() {
        let shape = VolumeShape::cube(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mask: Vec<u8> = (0..shape.num_voxels()).map(|_| rng.gen_bool(0.12) as u8).collect();
        if mask.iter().all(|&v| v == 0) {
            return;
        }
        let got = edt_squared(&mask, shape).unwrap();
        assert_eq!(got, edt_oracle(&mask, shape));
    }

    proptest! {
        #[test]
        fn erode_is_subset(seed in 0u64..500, w in 1usize..7, h in 1usize..7, d in 1usize..7) {
            let shape = VolumeShape::new(w, h, d);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask: Vec<u8> = (0..shape.num_voxels()).map(|_| rng.gen_bool(0.5) as u8).collect();
            let out = erode(&mask, shape, &StructuringElement::default());
            for (o, m) in out.iter().zip(&mask) {
                prop_assert!(o <= m);
            }
        }

        #[test]
        fn edt_equals_brute_force_on_small_volumes(seed in 0u64..300, side in 1usize..=8) {
            let shape = VolumeShape::cube(side);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask: Vec<u8> = (0..shape.num_voxels()).map(|_| rng.gen_bool(0.2) as u8).collect();
            prop_assume!(mask.iter().any(|&v| v != 0));
            let got = edt_squared(&mask, shape).unwrap();
            let want = edt_oracle(&mask, shape);
            prop_assert_eq!(got, want);
        }

        #[test]
        fn trimap_band_is_monotone_in_width(seed in 0u64..100) {
            let shape = VolumeShape::cube(6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<u8> = (0..shape.num_voxels()).map(|_| rng.gen_range(0..3u8)).collect();
            let labels = label_volume(shape, data, 3);
            let b1 = trimap_band(&labels, 3).unwrap();
            let b2 = trimap_band(&labels, 5).unwrap();
            for (a, b) in b1.mask.iter().zip(&b2.mask) {
                prop_assert!(a <= b);
            }
        }
    }
}
