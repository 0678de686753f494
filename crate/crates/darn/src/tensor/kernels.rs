//! Raw forward/adjoint loops behind the graph operations.
//!
//! Everything here runs sequentially over row-major buffers so results are
//! bit-identical across runs. Inner loops walk contiguous rows.

#![allow(clippy::needless_range_loop)]

use crate::scalar::Scalar;

/// Resolved geometry of a stride-1 2-D convolution.
#[derive(Clone, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

/// Valid output-column range for kernel column `kx`: keeps `ox + kx - pad`
/// inside `[0, w)`.
#[inline]
fn col_span(w: usize, w_out: usize, pad: usize, kx: usize) -> Option<(usize, usize)> {
    let lo = pad.saturating_sub(kx);
    let hi = (w as isize + pad as isize - kx as isize).min(w_out as isize);
    if (lo as isize) < hi {
        Some((lo, hi as usize))
    } else {
        None
    }
}

pub fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], d: &ConvDims, out: &mut [T]) {
    let plane_in = d.h * d.w;
    let plane_out = d.h_out * d.w_out;
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let out_base = (b * d.c_out + co) * plane_out;
            out[out_base..out_base + plane_out].fill(bias[co]);
            for ci in 0..d.c_in {
                let in_base = (b * d.c_in + ci) * plane_in;
                let w_base = (co * d.c_in + ci) * d.kh * d.kw;
                for ky in 0..d.kh {
                    for oy in 0..d.h_out {
                        let iy = oy as isize + ky as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let in_row = in_base + iy as usize * d.w;
                        let out_row = out_base + oy * d.w_out;
                        for kx in 0..d.kw {
                            let Some((lo, hi)) = col_span(d.w, d.w_out, d.pad, kx) else {
                                continue;
                            };
                            let wv = weight[w_base + ky * d.kw + kx];
                            let src = &x[in_row + lo + kx - d.pad..in_row + hi + kx - d.pad];
                            let dst = &mut out[out_row + lo..out_row + hi];
                            for (o, &s) in dst.iter_mut().zip(src) {
                                *o += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates adjoints for whichever buffers are provided.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    go: &[T],
    d: &ConvDims,
    mut d_input: Option<&mut [T]>,
    mut d_weight: Option<&mut [T]>,
    d_bias: Option<&mut [T]>,
) {
    let plane_in = d.h * d.w;
    let plane_out = d.h_out * d.w_out;
    if let Some(db) = d_bias {
        for b in 0..d.batch {
            for co in 0..d.c_out {
                let out_base = (b * d.c_out + co) * plane_out;
                let mut acc = T::zero();
                for &g in &go[out_base..out_base + plane_out] {
                    acc += g;
                }
                db[co] += acc;
            }
        }
    }
    if d_input.is_none() && d_weight.is_none() {
        return;
    }
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let out_base = (b * d.c_out + co) * plane_out;
            for ci in 0..d.c_in {
                let in_base = (b * d.c_in + ci) * plane_in;
                let w_base = (co * d.c_in + ci) * d.kh * d.kw;
                for ky in 0..d.kh {
                    for oy in 0..d.h_out {
                        let iy = oy as isize + ky as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let in_row = in_base + iy as usize * d.w;
                        let out_row = out_base + oy * d.w_out;
                        for kx in 0..d.kw {
                            let Some((lo, hi)) = col_span(d.w, d.w_out, d.pad, kx) else {
                                continue;
                            };
                            let src_lo = in_row + lo + kx - d.pad;
                            let src_hi = in_row + hi + kx - d.pad;
                            let go_row = &go[out_row + lo..out_row + hi];
                            if let Some(dw) = d_weight.as_deref_mut() {
                                let xs = &x[src_lo..src_hi];
                                let mut acc = T::zero();
                                for (&g, &xv) in go_row.iter().zip(xs) {
                                    acc += g * xv;
                                }
                                let wi = w_base + ky * d.kw + kx;
                                dw[wi] += acc;
                            }
                            if let Some(dx) = d_input.as_deref_mut() {
                                let wv = weight[w_base + ky * d.kw + kx];
                                let dst = &mut dx[src_lo..src_hi];
                                for (o, &g) in dst.iter_mut().zip(go_row) {
                                    *o += wv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel mean and biased variance over batch and spatial dims.
pub fn bn_batch_stats<T: Scalar>(
    x: &[T],
    batch: usize,
    c: usize,
    plane: usize,
) -> (Vec<T>, Vec<T>) {
    let m = T::from_usize(batch * plane).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for b in 0..batch {
            let base = (b * c + ch) * plane;
            for &v in &x[base..base + plane] {
                acc += v;
            }
        }
        mean[ch] = acc / m;
    }
    for ch in 0..c {
        let mu = mean[ch];
        let mut acc = T::zero();
        for b in 0..batch {
            let base = (b * c + ch) * plane;
            for &v in &x[base..base + plane] {
                let d = v - mu;
                acc += d * d;
            }
        }
        var[ch] = acc / m;
    }
    (mean, var)
}

/// Normalize with the given per-channel statistics and apply the affine.
#[allow(clippy::too_many_arguments)]
pub fn bn_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
    batch: usize,
    c: usize,
    plane: usize,
    out: &mut [T],
) {
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            for i in base..base + plane {
                out[i] = g * ((x[i] - mu) * is) + bt;
            }
        }
    }
}

/// Batch norm adjoint. In train mode the statistics are a function of the
/// input; in eval mode they are constants and only the affine part carries
/// gradient to the input.
#[allow(clippy::too_many_arguments)]
pub fn bn_backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    go: &[T],
    batch: usize,
    c: usize,
    plane: usize,
    train: bool,
    mut d_input: Option<&mut [T]>,
    mut d_gamma: Option<&mut [T]>,
    mut d_beta: Option<&mut [T]>,
) {
    let m = T::from_usize(batch * plane).unwrap();
    for ch in 0..c {
        let (mu, is) = (mean[ch], inv_std[ch]);
        let mut s_go = T::zero();
        let mut s_go_xhat = T::zero();
        for b in 0..batch {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                let xhat = (x[i] - mu) * is;
                s_go += go[i];
                s_go_xhat += go[i] * xhat;
            }
        }
        if let Some(dg) = d_gamma.as_deref_mut() {
            dg[ch] += s_go_xhat;
        }
        if let Some(db) = d_beta.as_deref_mut() {
            db[ch] += s_go;
        }
        if let Some(dx) = d_input.as_deref_mut() {
            let scale = gamma[ch] * is;
            let mean_go = s_go / m;
            let mean_go_xhat = s_go_xhat / m;
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                for i in base..base + plane {
                    if train {
                        let xhat = (x[i] - mu) * is;
                        dx[i] += scale * (go[i] - mean_go - xhat * mean_go_xhat);
                    } else {
                        dx[i] += scale * go[i];
                    }
                }
            }
        }
    }
}

/// 2x2/stride-2 max pooling with replication of the last row/column when a
/// spatial extent is odd. Returns values plus the flat input index of each
/// window's maximum (first position in scan order wins ties).
pub fn max_pool2_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<usize>) {
    let h_out = h.div_ceil(2);
    let w_out = w.div_ceil(2);
    let mut out = vec![T::zero(); batch * c * h_out * w_out];
    let mut argmax = vec![0usize; out.len()];
    let mut oi = 0;
    for b in 0..batch {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    for dy in 0..2 {
                        let iy = (2 * oy + dy).min(h - 1);
                        for dx in 0..2 {
                            let ix = (2 * ox + dx).min(w - 1);
                            let idx = base + iy * w + ix;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[oi] = best;
                    argmax[oi] = best_idx;
                    oi += 1;
                }
            }
        }
    }
    (out, argmax)
}

pub fn affine_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    batch: usize,
    d_in: usize,
    d_out: usize,
    out: &mut [T],
) {
    for b in 0..batch {
        let out_row = &mut out[b * d_out..(b + 1) * d_out];
        out_row.copy_from_slice(bias);
        for di in 0..d_in {
            let xv = x[b * d_in + di];
            let w_row = &weight[di * d_out..(di + 1) * d_out];
            for (o, &wv) in out_row.iter_mut().zip(w_row) {
                *o += xv * wv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn affine_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    go: &[T],
    batch: usize,
    d_in: usize,
    d_out: usize,
    mut d_input: Option<&mut [T]>,
    mut d_weight: Option<&mut [T]>,
    d_bias: Option<&mut [T]>,
) {
    if let Some(db) = d_bias {
        for b in 0..batch {
            let go_row = &go[b * d_out..(b + 1) * d_out];
            for (acc, &g) in db.iter_mut().zip(go_row) {
                *acc += g;
            }
        }
    }
    for b in 0..batch {
        let go_row = &go[b * d_out..(b + 1) * d_out];
        for di in 0..d_in {
            let w_row = &weight[di * d_out..(di + 1) * d_out];
            if let Some(dx) = d_input.as_deref_mut() {
                let mut acc = T::zero();
                for (&g, &wv) in go_row.iter().zip(w_row) {
                    acc += g * wv;
                }
                dx[b * d_in + di] += acc;
            }
            if let Some(dw) = d_weight.as_deref_mut() {
                let xv = x[b * d_in + di];
                let dw_row = &mut dw[di * d_out..(di + 1) * d_out];
                for (o, &g) in dw_row.iter_mut().zip(go_row) {
                    *o += xv * g;
                }
            }
        }
    }
}
