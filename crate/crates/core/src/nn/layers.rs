//! Layer primitives beyond convolutions: batch normalization, ELU, 2x2x2
//! max pooling, trilinear x2 upsampling, and per-voxel softmax/sigmoid.
//!
//! Backward passes are written as gathers (or per-block scatters) so every
//! output element is produced by exactly one task with a fixed accumulation
//! order.

use crate::parallel;

use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel statistics cached by the batch-norm forward pass.
#[derive(Clone, Debug, Default)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

/// Batch-norm forward in training mode: normalizes with batch statistics
/// over `(batch, z, y, x)` per channel, applies scale/shift, and updates the
/// running buffers in place (biased variance, momentum 0.1).
pub fn batchnorm_forward_train(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &mut [f32],
    running_var: &mut [f32],
) -> (Tensor, BnStats) {
    let (n, c, z, y, x) = input.dims();
    let spatial = z * y * x;
    let count = (n * spatial) as f64;
    let moments: Vec<(f64, f64)> = parallel::map_indexed(c, |ci| {
        let mut s = 0.0f64;
        let mut s2 = 0.0f64;
        for b in 0..n {
            for chunk in input.block(b, ci).chunks(parallel::SUM_CHUNK) {
                let (mut cs, mut cs2) = (0.0f64, 0.0f64);
                for &v in chunk {
                    cs += v as f64;
                    cs2 += (v as f64) * (v as f64);
                }
                s += cs;
                s2 += cs2;
            }
        }
        (s / count, (s2 / count - (s / count) * (s / count)).max(0.0))
    });
    let mut stats = BnStats { mean: Vec::with_capacity(c), inv_std: Vec::with_capacity(c) };
    for (ci, &(mean, var)) in moments.iter().enumerate() {
        stats.mean.push(mean as f32);
        stats.inv_std.push((1.0 / (var + BN_EPS).sqrt()) as f32);
        running_mean[ci] =
            ((1.0 - BN_MOMENTUM) * running_mean[ci] as f64 + BN_MOMENTUM * mean) as f32;
        running_var[ci] =
            ((1.0 - BN_MOMENTUM) * running_var[ci] as f64 + BN_MOMENTUM * var) as f32;
    }
    let out = bn_apply(input, &stats.mean, &stats.inv_std, gamma, beta);
    (out, stats)
}

/// Batch-norm forward in inference mode: uses the running buffers.
pub fn batchnorm_forward_eval(
    input: &Tensor,
    gamma: &[f32],
    beta: &[f32],
    running_mean: &[f32],
    running_var: &[f32],
) -> Tensor {
    let inv_std: Vec<f32> =
        running_var.iter().map(|&v| (1.0 / (v as f64 + BN_EPS).sqrt()) as f32).collect();
    bn_apply(input, running_mean, &inv_std, gamma, beta)
}

fn bn_apply(input: &Tensor, mean: &[f32], inv_std: &[f32], gamma: &[f32], beta: &[f32]) -> Tensor {
    let (n, c, z, y, x) = input.dims();
    let spatial = z * y * x;
    let mut out = Tensor::zeros(n, c, z, y, x);
    parallel::for_each_chunk_mut(&mut out.data, spatial, |unit, slab| {
        let ci = unit % c;
        let b = unit / c;
        let scale = gamma[ci] * inv_std[ci];
        let shift = beta[ci] - mean[ci] * scale;
        for (o, &v) in slab.iter_mut().zip(input.block(b, ci)) {
            *o = v * scale + shift;
        }
    });
    out
}

/// Batch-norm backward: returns the input gradient and accumulates
/// scale/shift gradients into `dgamma` / `dbeta`.
pub fn batchnorm_backward(
    input: &Tensor,
    dout: &Tensor,
    gamma: &[f32],
    stats: &BnStats,
    dgamma: &mut [f32],
    dbeta: &mut [f32],
) -> Tensor {
    let (n, c, z, y, x) = input.dims();
    let spatial = z * y * x;
    let count = (n * spatial) as f64;
    // per channel: sum(dout) and sum(dout * xhat)
    let sums: Vec<(f64, f64)> = parallel::map_indexed(c, |ci| {
        let mean = stats.mean[ci];
        let istd = stats.inv_std[ci];
        let mut sd = 0.0f64;
        let mut sdx = 0.0f64;
        for b in 0..n {
            let xs = input.block(b, ci);
            let gs = dout.block(b, ci);
            for (xc, gc) in xs.chunks(parallel::SUM_CHUNK).zip(gs.chunks(parallel::SUM_CHUNK)) {
                let (mut cs, mut csx) = (0.0f32, 0.0f32);
                for (&xv, &gv) in xc.iter().zip(gc) {
                    cs += gv;
                    csx += gv * (xv - mean) * istd;
                }
                sd += cs as f64;
                sdx += csx as f64;
            }
        }
        (sd, sdx)
    });
    let mut din = Tensor::zeros(n, c, z, y, x);
    let dout_ref = &dout;
    let input_ref = &input;
    parallel::for_each_chunk_mut(&mut din.data, spatial, |unit, slab| {
        let ci = unit % c;
        let b = unit / c;
        let (sd, sdx) = sums[ci];
        let mean = stats.mean[ci];
        let istd = stats.inv_std[ci];
        let k = gamma[ci] * istd;
        let md = (sd / count) as f32;
        let mdx = (sdx / count) as f32;
        for ((o, &g), &v) in
            slab.iter_mut().zip(dout_ref.block(b, ci)).zip(input_ref.block(b, ci))
        {
            let xhat = (v - mean) * istd;
            *o = k * (g - md - xhat * mdx);
        }
    });
    for ci in 0..c {
        dbeta[ci] += sums[ci].0 as f32;
        dgamma[ci] += sums[ci].1 as f32;
    }
    din
}

/// ELU (alpha = 1) applied in place.
pub fn elu_forward(mut t: Tensor) -> Tensor {
    parallel::for_each_chunk_mut(&mut t.data, parallel::SUM_CHUNK, |_, chunk| {
        for v in chunk {
            if *v < 0.0 {
                *v = v.exp() - 1.0;
            }
        }
    });
    t
}

/// ELU gradient from the forward *output* (monotone, sign-preserving):
/// `dx = dy` where `y > 0`, else `dy * (y + 1)`.
pub fn elu_backward(output: &Tensor, dout: &Tensor) -> Tensor {
    let mut din = Tensor::zeros(dout.n, dout.c, dout.z, dout.y, dout.x);
    let out_ref = &output.data;
    let g_ref = &dout.data;
    parallel::for_each_chunk_mut(&mut din.data, parallel::SUM_CHUNK, |i, chunk| {
        let base = i * parallel::SUM_CHUNK;
        for (j, d) in chunk.iter_mut().enumerate() {
            let yv = out_ref[base + j];
            let gv = g_ref[base + j];
            *d = if yv > 0.0 { gv } else { gv * (yv + 1.0) };
        }
    });
    din
}

/// 2x2x2 max pooling with stride 2. Returns the pooled tensor and the
/// winning input offset (within each sample-channel block) per output voxel.
pub fn maxpool_forward(input: &Tensor) -> (Tensor, Vec<u32>) {
    let (n, c, z, y, x) = input.dims();
    debug_assert!(z % 2 == 0 && y % 2 == 0 && x % 2 == 0);
    let (zo, yo, xo) = (z / 2, y / 2, x / 2);
    let mut out = Tensor::zeros(n, c, zo, yo, xo);
    let mut arg = vec![0u32; out.data.len()];
    let out_plane = yo * xo;
    {
        // one task per (batch, channel, zo) output slab for both buffers
        let out_data = &mut out.data;
        for_each_two_chunks(out_data, &mut arg, out_plane, |unit, slab, args| {
            let zi = (unit % zo) * 2;
            let ci = (unit / zo) % c;
            let b = unit / (zo * c);
            let block = input.block(b, ci);
            for yy in 0..yo {
                for xx in 0..xo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_at = 0u32;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let off = ((zi + dz) * y + (yy * 2 + dy)) * x + (xx * 2 + dx);
                                let v = block[off];
                                if v > best {
                                    best = v;
                                    best_at = off as u32;
                                }
                            }
                        }
                    }
                    slab[yy * xo + xx] = best;
                    args[yy * xo + xx] = best_at;
                }
            }
        });
    }
    (out, arg)
}

/// Helper: runs `f(unit, a_chunk, b_chunk)` over two equally chunked buffers.
fn for_each_two_chunks<F>(a: &mut [f32], b: &mut [u32], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f32], &mut [u32]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        a.par_chunks_mut(chunk)
            .zip(b.par_chunks_mut(chunk))
            .enumerate()
            .for_each(|(i, (ca, cb))| f(i, ca, cb));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, (ca, cb)) in a.chunks_mut(chunk).zip(b.chunks_mut(chunk)).enumerate() {
            f(i, ca, cb);
        }
    }
}

/// Max-pool backward: routes each output gradient to its argmax voxel.
pub fn maxpool_backward(dout: &Tensor, arg: &[u32], input_dims: (usize, usize, usize, usize, usize)) -> Tensor {
    let (n, c, z, y, x) = input_dims;
    let mut din = Tensor::zeros(n, c, z, y, x);
    let spatial = z * y * x;
    let out_spatial = dout.spatial();
    parallel::for_each_chunk_mut(&mut din.data, spatial, |unit, slab| {
        // unit = b * c + ci; scatter within one sample-channel block
        let base = unit * out_spatial;
        let go = &dout.data[base..base + out_spatial];
        let ao = &arg[base..base + out_spatial];
        for (g, &a) in go.iter().zip(ao) {
            slab[a as usize] += g;
        }
    });
    din
}

/// Per-axis interpolation map for x2 trilinear upsampling under the
/// half-pixel convention: output `o` blends inputs `lo` and `hi` with weight
/// `f` on `hi`.
fn up_axis_map(src: usize) -> Vec<(usize, usize, f32)> {
    (0..src * 2)
        .map(|o| {
            let s = ((o as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (s - lo as f64) as f32)
        })
        .collect()
}

/// Inverse map: contributions `(output_index, weight)` per input index.
fn up_axis_inverse(src: usize) -> Vec<Vec<(usize, f32)>> {
    let mut inv = vec![Vec::new(); src];
    for (o, &(lo, hi, f)) in up_axis_map(src).iter().enumerate() {
        if f < 1.0 {
            inv[lo].push((o, 1.0 - f));
        }
        if f > 0.0 {
            inv[hi].push((o, f));
        }
    }
    inv
}

/// Trilinear x2 upsampling.
pub fn upsample_forward(input: &Tensor) -> Tensor {
    let (n, c, z, y, x) = input.dims();
    let (zo, yo, xo) = (z * 2, y * 2, x * 2);
    let mz = up_axis_map(z);
    let my = up_axis_map(y);
    let mx = up_axis_map(x);
    let mut out = Tensor::zeros(n, c, zo, yo, xo);
    let plane = yo * xo;
    parallel::for_each_chunk_mut(&mut out.data, plane, |unit, slab| {
        let zz = unit % zo;
        let ci = (unit / zo) % c;
        let b = unit / (zo * c);
        let block = input.block(b, ci);
        let (z0, z1, fz) = mz[zz];
        for yy in 0..yo {
            let (y0, y1, fy) = my[yy];
            for xx in 0..xo {
                let (x0, x1, fx) = mx[xx];
                let fetch = |zi: usize, yi: usize, xi: usize| block[(zi * y + yi) * x + xi];
                let c00 = fetch(z0, y0, x0) + (fetch(z0, y0, x1) - fetch(z0, y0, x0)) * fx;
                let c10 = fetch(z0, y1, x0) + (fetch(z0, y1, x1) - fetch(z0, y1, x0)) * fx;
                let c01 = fetch(z1, y0, x0) + (fetch(z1, y0, x1) - fetch(z1, y0, x0)) * fx;
                let c11 = fetch(z1, y1, x0) + (fetch(z1, y1, x1) - fetch(z1, y1, x0)) * fx;
                let c0 = c00 + (c10 - c00) * fy;
                let c1 = c01 + (c11 - c01) * fy;
                slab[yy * xo + xx] = c0 + (c1 - c0) * fz;
            }
        }
    });
    out
}

/// Upsample backward as a gather: each input voxel collects the weighted
/// output gradients that referenced it.
pub fn upsample_backward(dout: &Tensor, input_dims: (usize, usize, usize, usize, usize)) -> Tensor {
    let (n, c, z, y, x) = input_dims;
    let (yo, xo) = (y * 2, x * 2);
    let iz = up_axis_inverse(z);
    let iy = up_axis_inverse(y);
    let ix = up_axis_inverse(x);
    let mut din = Tensor::zeros(n, c, z, y, x);
    let plane = y * x;
    parallel::for_each_chunk_mut(&mut din.data, plane, |unit, slab| {
        let zi = unit % z;
        let ci = (unit / z) % c;
        let b = unit / (z * c);
        let block = dout.block(b, ci);
        for yi in 0..y {
            for xi in 0..x {
                let mut acc = 0.0f32;
                for &(zo, wz) in &iz[zi] {
                    for &(yy, wy) in &iy[yi] {
                        let wzy = wz * wy;
                        for &(xx, wx) in &ix[xi] {
                            acc += wzy * wx * block[(zo * yo + yy) * xo + xx];
                        }
                    }
                }
                slab[yi * x + xi] = acc;
            }
        }
    });
    din
}

/// Per-voxel softmax over channels (max-shifted).
pub fn softmax_forward(input: &Tensor) -> Tensor {
    let (_, c, z, y, x) = input.dims();
    let spatial = z * y * x;
    let mut out = input.clone();
    let sample_len = c * spatial;
    parallel::for_each_chunk_mut(&mut out.data, sample_len, |_, sample| {
        for v in 0..spatial {
            let mut max = f32::NEG_INFINITY;
            for ci in 0..c {
                max = max.max(sample[ci * spatial + v]);
            }
            let mut sum = 0.0f32;
            for ci in 0..c {
                let e = (sample[ci * spatial + v] - max).exp();
                sample[ci * spatial + v] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for ci in 0..c {
                sample[ci * spatial + v] *= inv;
            }
        }
    });
    out
}

/// Softmax backward from the forward output:
/// `dz_c = p_c * (dp_c - sum_k dp_k p_k)`.
pub fn softmax_backward(output: &Tensor, dout: &Tensor) -> Tensor {
    let (n, c, z, y, x) = output.dims();
    let spatial = z * y * x;
    let mut din = Tensor::zeros(n, c, z, y, x);
    let sample_len = c * spatial;
    let p_ref = &output.data;
    let g_ref = &dout.data;
    parallel::for_each_chunk_mut(&mut din.data, sample_len, |b, sample| {
        let base = b * sample_len;
        for v in 0..spatial {
            let mut dot = 0.0f32;
            for ci in 0..c {
                let o = base + ci * spatial + v;
                dot += g_ref[o] * p_ref[o];
            }
            for ci in 0..c {
                let o = base + ci * spatial + v;
                sample[ci * spatial + v] = p_ref[o] * (g_ref[o] - dot);
            }
        }
    });
    din
}

/// Per-voxel sigmoid.
pub fn sigmoid_forward(mut t: Tensor) -> Tensor {
    parallel::for_each_chunk_mut(&mut t.data, parallel::SUM_CHUNK, |_, chunk| {
        for v in chunk {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
    });
    t
}

/// Sigmoid backward from the forward output: `dz = dy * y * (1 - y)`.
pub fn sigmoid_backward(output: &Tensor, dout: &Tensor) -> Tensor {
    let mut din = Tensor::zeros(dout.n, dout.c, dout.z, dout.y, dout.x);
    let y_ref = &output.data;
    let g_ref = &dout.data;
    parallel::for_each_chunk_mut(&mut din.data, parallel::SUM_CHUNK, |i, chunk| {
        let base = i * parallel::SUM_CHUNK;
        for (j, d) in chunk.iter_mut().enumerate() {
            let yv = y_ref[base + j];
            *d = g_ref[base + j] * yv * (1.0 - yv);
        }
    });
    din
}

/// ReLU applied in place (used inside attention gates).
pub fn relu_forward(mut t: Tensor) -> Tensor {
    parallel::for_each_chunk_mut(&mut t.data, parallel::SUM_CHUNK, |_, chunk| {
        for v in chunk {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    });
    t
}

/// ReLU gradient masked by the forward output.
pub fn relu_backward(output: &Tensor, dout: &Tensor) -> Tensor {
    let mut din = Tensor::zeros(dout.n, dout.c, dout.z, dout.y, dout.x);
    let y_ref = &output.data;
    let g_ref = &dout.data;
    parallel::for_each_chunk_mut(&mut din.data, parallel::SUM_CHUNK, |i, chunk| {
        let base = i * parallel::SUM_CHUNK;
        for (j, d) in chunk.iter_mut().enumerate() {
            *d = if y_ref[base + j] > 0.0 { g_ref[base + j] } else { 0.0 };
        }
    });
    din
}
