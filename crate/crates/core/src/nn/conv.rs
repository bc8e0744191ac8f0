//! Direct 3D convolutions (3x3x3 padded and 1x1x1) with input- and
//! weight-gradient passes.
//!
//! The 3x3x3 kernel is evaluated row-wise: for one output row, every
//! contributing input row is combined with a three-tap stencil, which keeps
//! the inner loop over x contiguous and vectorizable. Work is parallelized
//! over `(batch, out_channel, z)` slabs; each output element is written by
//! exactly one task in a fixed accumulation order, so results do not depend
//! on the thread count.
//!
//! Weight layout: `[out_ch][in_ch][kz][ky][kx]`, biases `[out_ch]`.

use crate::parallel;

use super::tensor::Tensor;

/// `out[x] += wm*in[x-1] + w0*in[x] + wp*in[x+1]`, out-of-range taps dropped.
#[inline(always)]
fn stencil_row(out: &mut [f32], inp: &[f32], wm: f32, w0: f32, wp: f32) {
    let n = out.len();
    if n == 1 {
        out[0] += w0 * inp[0];
        return;
    }
    out[0] += w0 * inp[0] + wp * inp[1];
    for x in 1..n - 1 {
        out[x] += wm * inp[x - 1] + w0 * inp[x] + wp * inp[x + 1];
    }
    out[n - 1] += wm * inp[n - 2] + w0 * inp[n - 1];
}

/// Shifted dot products of an output-gradient row against an input row:
/// returns `(sum dout[x]*in[x-1], sum dout[x]*in[x], sum dout[x]*in[x+1])`.
#[inline(always)]
fn shift_dots(dout: &[f32], inp: &[f32]) -> (f32, f32, f32) {
    let n = dout.len();
    let mut dm = 0.0f32;
    let mut d0 = 0.0f32;
    let mut dp = 0.0f32;
    for x in 0..n {
        let g = dout[x];
        if x >= 1 {
            dm += g * inp[x - 1];
        }
        d0 += g * inp[x];
        if x + 1 < n {
            dp += g * inp[x + 1];
        }
    }
    (dm, d0, dp)
}

/// Forward padded 3x3x3 convolution: `out = bias + weights * input`.
pub fn conv3_forward(input: &Tensor, weights: &[f32], bias: &[f32], out_ch: usize) -> Tensor {
    let (n, cin, z, y, x) = input.dims();
    debug_assert_eq!(weights.len(), out_ch * cin * 27);
    debug_assert_eq!(bias.len(), out_ch);
    let mut out = Tensor::zeros(n, out_ch, z, y, x);
    let plane = y * x;
    let spatial = z * plane;
    parallel::for_each_chunk_mut(&mut out.data, plane, |unit, slab| {
        // unit = ((batch * out_ch) + co) * z + zi
        let zi = unit % z;
        let co = (unit / z) % out_ch;
        let b = unit / (z * out_ch);
        slab.fill(bias[co]);
        let sample = input.sample(b);
        for ci in 0..cin {
            let chan = &sample[ci * spatial..(ci + 1) * spatial];
            let wbase = (co * cin + ci) * 27;
            for dz in 0..3usize {
                let zz = zi as isize + dz as isize - 1;
                if zz < 0 || zz >= z as isize {
                    continue;
                }
                let in_plane = &chan[zz as usize * plane..(zz as usize + 1) * plane];
                for dy in 0..3usize {
                    let w = &weights[wbase + dz * 9 + dy * 3..wbase + dz * 9 + dy * 3 + 3];
                    let (lo, hi) = row_range(y, dy);
                    for yi in lo..hi {
                        let yy = (yi + dy) - 1;
                        stencil_row(
                            &mut slab[yi * x..(yi + 1) * x],
                            &in_plane[yy * x..(yy + 1) * x],
                            w[0],
                            w[1],
                            w[2],
                        );
                    }
                }
            }
        }
    });
    out
}

/// Output rows `yi` for which `yy = yi + dy - 1` is a valid input row.
#[inline(always)]
fn row_range(y: usize, dy: usize) -> (usize, usize) {
    match dy {
        0 => (1, y),
        1 => (0, y),
        _ => (0, y.saturating_sub(1)),
    }
}

/// Input gradient of the padded 3x3x3 convolution (correlation with the
/// flipped kernel).
pub fn conv3_backward_input(
    dout: &Tensor,
    weights: &[f32],
    in_ch: usize,
) -> Tensor {
    let (n, cout, z, y, x) = dout.dims();
    debug_assert_eq!(weights.len(), cout * in_ch * 27);
    let mut din = Tensor::zeros(n, in_ch, z, y, x);
    let plane = y * x;
    let spatial = z * plane;
    parallel::for_each_chunk_mut(&mut din.data, plane, |unit, slab| {
        let zi = unit % z;
        let ci = (unit / z) % in_ch;
        let b = unit / (z * in_ch);
        let sample = dout.sample(b);
        for co in 0..cout {
            let chan = &sample[co * spatial..(co + 1) * spatial];
            let wbase = (co * in_ch + ci) * 27;
            for dz in 0..3usize {
                // contribution of dout plane zo = zi + 1 - dz
                let zo = zi as isize + 1 - dz as isize;
                if zo < 0 || zo >= z as isize {
                    continue;
                }
                let out_plane = &chan[zo as usize * plane..(zo as usize + 1) * plane];
                for dy in 0..3usize {
                    let w = &weights[wbase + dz * 9 + dy * 3..wbase + dz * 9 + dy * 3 + 3];
                    // input row yi reads dout row yo = yi + 1 - dy
                    let (lo, hi) = row_range(y, 2 - dy);
                    for yi in lo..hi {
                        let yo = (yi + 1) - dy;
                        stencil_row(
                            &mut slab[yi * x..(yi + 1) * x],
                            &out_plane[yo * x..(yo + 1) * x],
                            w[2],
                            w[1],
                            w[0],
                        );
                    }
                }
            }
        }
    });
    din
}

/// Weight and bias gradients of the padded 3x3x3 convolution, accumulated
/// into `dw` / `db`.
pub fn conv3_backward_params(
    input: &Tensor,
    dout: &Tensor,
    dw: &mut [f32],
    db: &mut [f32],
) {
    let (n, cin, z, y, x) = input.dims();
    let cout = dout.c;
    debug_assert_eq!(dw.len(), cout * cin * 27);
    debug_assert_eq!(db.len(), cout);
    let plane = y * x;
    parallel::for_each_chunk_mut(dw, 27, |pair, taps| {
        // pair = co * cin + ci
        let co = pair / cin;
        let ci = pair % cin;
        let mut acc = [0.0f64; 27];
        for b in 0..n {
            let go = dout.block(b, co);
            let gi = input.block(b, ci);
            for zo in 0..z {
                let out_plane = &go[zo * plane..(zo + 1) * plane];
                for dz in 0..3usize {
                    let zz = zo as isize + dz as isize - 1;
                    if zz < 0 || zz >= z as isize {
                        continue;
                    }
                    let in_plane = &gi[zz as usize * plane..(zz as usize + 1) * plane];
                    for dy in 0..3usize {
                        let (lo, hi) = row_range(y, dy);
                        let mut row_acc = (0.0f32, 0.0f32, 0.0f32);
                        for yo in lo..hi {
                            let yy = (yo + dy) - 1;
                            let (dm, d0, dp) = shift_dots(
                                &out_plane[yo * x..(yo + 1) * x],
                                &in_plane[yy * x..(yy + 1) * x],
                            );
                            row_acc.0 += dm;
                            row_acc.1 += d0;
                            row_acc.2 += dp;
                        }
                        let t = dz * 9 + dy * 3;
                        acc[t] += row_acc.0 as f64;
                        acc[t + 1] += row_acc.1 as f64;
                        acc[t + 2] += row_acc.2 as f64;
                    }
                }
            }
        }
        for (tap, a) in taps.iter_mut().zip(acc) {
            *tap += a as f32;
        }
    });
    let bias_grads = parallel::map_indexed(cout, |co| {
        let mut acc = 0.0f64;
        for b in 0..n {
            acc += parallel_free_sum(dout.block(b, co));
        }
        acc
    });
    for (b, g) in db.iter_mut().zip(bias_grads) {
        *b += g as f32;
    }
}

/// Sequential chunked sum (already inside a parallel task).
fn parallel_free_sum(data: &[f32]) -> f64 {
    data.chunks(parallel::SUM_CHUNK)
        .map(|c| c.iter().map(|&v| v as f64).sum::<f64>())
        .sum()
}

/// Forward 1x1x1 convolution: per-voxel channel mix.
/// Weight layout `[out_ch][in_ch]`.
pub fn conv1_forward(input: &Tensor, weights: &[f32], bias: &[f32], out_ch: usize) -> Tensor {
    let (n, cin, z, y, x) = input.dims();
    debug_assert_eq!(weights.len(), out_ch * cin);
    let mut out = Tensor::zeros(n, out_ch, z, y, x);
    let spatial = z * y * x;
    parallel::for_each_chunk_mut(&mut out.data, spatial, |unit, slab| {
        let co = unit % out_ch;
        let b = unit / out_ch;
        slab.fill(bias[co]);
        for ci in 0..cin {
            let w = weights[co * cin + ci];
            for (o, &v) in slab.iter_mut().zip(input.block(b, ci)) {
                *o += w * v;
            }
        }
    });
    out
}

/// Input gradient of the 1x1x1 convolution.
pub fn conv1_backward_input(dout: &Tensor, weights: &[f32], in_ch: usize) -> Tensor {
    let (n, cout, z, y, x) = dout.dims();
    let mut din = Tensor::zeros(n, in_ch, z, y, x);
    let spatial = z * y * x;
    parallel::for_each_chunk_mut(&mut din.data, spatial, |unit, slab| {
        let ci = unit % in_ch;
        let b = unit / in_ch;
        for co in 0..cout {
            let w = weights[co * in_ch + ci];
            for (o, &g) in slab.iter_mut().zip(dout.block(b, co)) {
                *o += w * g;
            }
        }
    });
    din
}

/// Weight and bias gradients of the 1x1x1 convolution, accumulated into
/// `dw` / `db`.
pub fn conv1_backward_params(input: &Tensor, dout: &Tensor, dw: &mut [f32], db: &mut [f32]) {
    let (n, cin, ..) = input.dims();
    let cout = dout.c;
    parallel::for_each_chunk_mut(dw, 1, |pair, tap| {
        let co = pair / cin;
        let ci = pair % cin;
        let mut acc = 0.0f64;
        for b in 0..n {
            let go = dout.block(b, co);
            let gi = input.block(b, ci);
            acc += go
                .chunks(parallel::SUM_CHUNK)
                .zip(gi.chunks(parallel::SUM_CHUNK))
                .map(|(a, bb)| {
                    a.iter().zip(bb).map(|(&p, &q)| p * q).sum::<f32>() as f64
                })
                .sum::<f64>();
        }
        tap[0] += acc as f32;
    });
    let bias_grads = parallel::map_indexed(cout, |co| {
        let mut acc = 0.0f64;
        for b in 0..n {
            acc += parallel_free_sum(dout.block(b, co));
        }
        acc
    });
    for (b, g) in db.iter_mut().zip(bias_grads) {
        *b += g as f32;
    }
}
