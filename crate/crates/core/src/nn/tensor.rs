//! Dense 5D tensors for the execution backend.
//!
//! Layout is `[batch][channel][z][y][x]` with x fastest, matching the volume
//! containers, so a sample-channel block is one contiguous slice.

/// Owned f32 tensor with batch, channel, and three spatial dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub z: usize,
    pub y: usize,
    pub x: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, z: usize, y: usize, x: usize) -> Self {
        Self { n, c, z, y, x, data: vec![0.0; n * c * z * y * x] }
    }

    pub fn from_vec(n: usize, c: usize, z: usize, y: usize, x: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * z * y * x, "tensor data length mismatch");
        Self { n, c, z, y, x, data }
    }

    /// Voxels per channel.
    #[inline(always)]
    pub fn spatial(&self) -> usize {
        self.z * self.y * self.x
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Contiguous block of one sample-channel.
    #[inline(always)]
    pub fn block(&self, n: usize, c: usize) -> &[f32] {
        let s = self.spatial();
        let start = (n * self.c + c) * s;
        &self.data[start..start + s]
    }

    #[inline(always)]
    pub fn block_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let s = self.spatial();
        let start = (n * self.c + c) * s;
        &mut self.data[start..start + s]
    }

    /// Contiguous block of one whole sample (all channels).
    #[inline(always)]
    pub fn sample(&self, n: usize) -> &[f32] {
        let s = self.c * self.spatial();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn same_dims(&self, other: &Tensor) -> bool {
        self.n == other.n
            && self.c == other.c
            && self.z == other.z
            && self.y == other.y
            && self.x == other.x
    }

    pub fn dims(&self) -> (usize, usize, usize, usize, usize) {
        (self.n, self.c, self.z, self.y, self.x)
    }
}
