//! Forward and backward kernels for every primitive.
//!
//! Two accumulation disciplines, both with fixed reduction order so repeated
//! runs are bitwise identical:
//! - convolution MAC loops run in the tensor's own precision, either as
//!   contiguous axpy passes or as an 8-lane dot whose lanes combine in a
//!   fixed order;
//! - reductions over batch/spatial axes (means, norms, bias gradients)
//!   accumulate in f64 and cast once at the end.

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

const LANES: usize = 8;

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

/// Dot product with 8 independent accumulator lanes; lanes combine in index
/// order, so the result is deterministic while the lane loop vectorizes.
#[inline]
fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / LANES;
    let mut acc = [T::zero(); LANES];
    for i in 0..chunks {
        let base = i * LANES;
        for (l, s) in acc.iter_mut().enumerate() {
            *s = *s + a[base + l] * b[base + l];
        }
    }
    let mut s = T::zero();
    for v in acc {
        s = s + v;
    }
    for i in chunks * LANES..n {
        s = s + a[i] * b[i];
    }
    s
}

/// Lane-structured sum accumulated in f64.
#[inline]
pub(crate) fn lane_sum_f64<T: Scalar>(a: &[T]) -> f64 {
    let n = a.len();
    let chunks = n / LANES;
    let mut acc = [0f64; LANES];
    for i in 0..chunks {
        let base = i * LANES;
        for (l, s) in acc.iter_mut().enumerate() {
            *s += a[base + l].to_f64();
        }
    }
    let mut s = 0f64;
    for v in acc {
        s += v;
    }
    for i in chunks * LANES..n {
        s += a[i].to_f64();
    }
    s
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {} and {} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
fn conv_validate<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<(usize, usize)> {
    let (_, cin, h, wd) = x.shape().dims();
    let (cout, cpg, kh, kw) = w.shape().dims();
    if kh != kw || kh % 2 == 0 {
        return Err(Error::dim(format!(
            "kernel must be square with odd size, got {kh}x{kw}"
        )));
    }
    if stride == 0 {
        return Err(Error::config("stride must be at least 1"));
    }
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(Error::config(format!(
            "groups {groups} must divide both Cin {cin} and Cout {cout}"
        )));
    }
    if cpg != cin / groups {
        return Err(Error::dim(format!(
            "weight expects {cpg} channels per group, input supplies {}",
            cin / groups
        )));
    }
    if let Some(bt) = b {
        if bt.shape() != Shape::new(1, cout, 1, 1) {
            return Err(Error::dim(format!(
                "bias shape {} does not match {cout} output channels",
                bt.shape()
            )));
        }
    }
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(Error::dim(format!(
            "input {h}x{wd} with pad {pad} is smaller than kernel {kh}"
        )));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    Ok((oh, ow))
}

/// Grouped 2-D convolution with zero padding. Weight layout is
/// (Cout, Cin/groups, k, k); bias, when present, is (1, Cout, 1, 1).
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let (oh, ow) = conv_validate(x, w, b, stride, pad, groups)?;
    let (n, _, h, wd) = x.shape().dims();
    let (cout, cpg, k, _) = w.shape().dims();
    let os = Shape::new(n, cout, oh, ow);
    let mut out = vec![T::zero(); os.numel()];

    // Bias seeds the accumulator, so every output element reduces in one
    // fixed (ci, ky, kx) order after it.
    if let Some(bt) = b {
        let bd = bt.data();
        for ni in 0..n {
            for co in 0..cout {
                let base = os.idx(ni, co, 0, 0);
                out[base..base + oh * ow].fill(bd[co]);
            }
        }
    }

    let xd = x.data();
    let wdat = w.data();
    let xs = x.shape();
    let ws = w.shape();
    let copg = cout / groups;

    if stride == 1 {
        for ni in 0..n {
            for g in 0..groups {
                for col in 0..copg {
                    let co = g * copg + col;
                    for cil in 0..cpg {
                        let ci = g * cpg + cil;
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = wdat[ws.idx(co, cil, ky, kx)];
                                let lo = pad.saturating_sub(kx);
                                let hi = (wd + pad).saturating_sub(kx).min(ow);
                                if lo >= hi {
                                    continue;
                                }
                                for ohi in 0..oh {
                                    let ih = ohi as isize + ky as isize - pad as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    let ob = os.idx(ni, co, ohi, lo);
                                    let xb = xs.idx(ni, ci, ih as usize, lo + kx - pad);
                                    axpy(wv, &xd[xb..xb + hi - lo], &mut out[ob..ob + hi - lo]);
                                }
                            }
                        }
                    }
                }
            }
        }
    } else {
        for ni in 0..n {
            for g in 0..groups {
                for col in 0..copg {
                    let co = g * copg + col;
                    for ohi in 0..oh {
                        for owi in 0..ow {
                            let mut acc = out[os.idx(ni, co, ohi, owi)];
                            for cil in 0..cpg {
                                let ci = g * cpg + cil;
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let ih = (ohi * stride + ky) as isize - pad as isize;
                                        let iw = (owi * stride + kx) as isize - pad as isize;
                                        if ih < 0
                                            || iw < 0
                                            || ih >= h as isize
                                            || iw >= wd as isize
                                        {
                                            continue;
                                        }
                                        acc = acc
                                            + wdat[ws.idx(co, cil, ky, kx)]
                                                * xd[xs.idx(ni, ci, ih as usize, iw as usize)];
                                    }
                                }
                            }
                            out[os.idx(ni, co, ohi, owi)] = acc;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// Reverse-mode kernels for [`conv2d`]: gradients w.r.t. input, weight, and
/// (when `has_bias`) bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    has_bias: bool,
    stride: usize,
    pad: usize,
    groups: usize,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let (oh, ow) = conv_validate(x, w, None, stride, pad, groups)?;
    let (n, _, h, wd) = x.shape().dims();
    let (cout, cpg, k, _) = w.shape().dims();
    let ys = Shape::new(n, cout, oh, ow);
    same_shape(dy, &Tensor::zeros(ys), "conv2d upstream gradient")?;

    let xd = x.data();
    let wdat = w.data();
    let dyd = dy.data();
    let xs = x.shape();
    let ws = w.shape();
    let copg = cout / groups;

    let mut dx = vec![T::zero(); xs.numel()];
    let mut dw = vec![T::zero(); ws.numel()];

    if stride == 1 {
        for ni in 0..n {
            for g in 0..groups {
                for cil in 0..cpg {
                    let ci = g * cpg + cil;
                    for col in 0..copg {
                        let co = g * copg + col;
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = wdat[ws.idx(co, cil, ky, kx)];
                                // dx(ih, iw) += wv * dy(ih + pad - ky, iw + pad - kx)
                                let lo = kx.saturating_sub(pad);
                                let hi = (ow + kx).saturating_sub(pad).min(wd);
                                if lo >= hi {
                                    continue;
                                }
                                for ih in 0..h {
                                    let ohi = ih as isize + pad as isize - ky as isize;
                                    if ohi < 0 || ohi >= oh as isize {
                                        continue;
                                    }
                                    let db = xs.idx(ni, ci, ih, lo);
                                    let yb = ys.idx(ni, co, ohi as usize, lo + pad - kx);
                                    axpy(wv, &dyd[yb..yb + hi - lo], &mut dx[db..db + hi - lo]);
                                }
                            }
                        }
                    }
                }
            }
        }
        // dw(co, cil, ky, kx) = sum over (n, oh) of row dots; f64 across rows.
        for g in 0..groups {
            for col in 0..copg {
                let co = g * copg + col;
                for cil in 0..cpg {
                    let ci = g * cpg + cil;
                    for ky in 0..k {
                        for kx in 0..k {
                            let lo = pad.saturating_sub(kx);
                            let hi = (wd + pad).saturating_sub(kx).min(ow);
                            let mut acc = 0f64;
                            if lo < hi {
                                for ni in 0..n {
                                    for ohi in 0..oh {
                                        let ih =
                                            ohi as isize + ky as isize - pad as isize;
                                        if ih < 0 || ih >= h as isize {
                                            continue;
                                        }
                                        let yb = ys.idx(ni, co, ohi, lo);
                                        let xb =
                                            xs.idx(ni, ci, ih as usize, lo + kx - pad);
                                        acc += lane_dot(
                                            &dyd[yb..yb + hi - lo],
                                            &xd[xb..xb + hi - lo],
                                        )
                                        .to_f64();
                                    }
                                }
                            }
                            dw[ws.idx(co, cil, ky, kx)] = T::from_f64(acc);
                        }
                    }
                }
            }
        }
    } else {
        for ni in 0..n {
            for g in 0..groups {
                for col in 0..copg {
                    let co = g * copg + col;
                    for ohi in 0..oh {
                        for owi in 0..ow {
                            let gv = dyd[ys.idx(ni, co, ohi, owi)];
                            for cil in 0..cpg {
                                let ci = g * cpg + cil;
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let ih = (ohi * stride + ky) as isize - pad as isize;
                                        let iw = (owi * stride + kx) as isize - pad as isize;
                                        if ih < 0
                                            || iw < 0
                                            || ih >= h as isize
                                            || iw >= wd as isize
                                        {
                                            continue;
                                        }
                                        let xi = xs.idx(ni, ci, ih as usize, iw as usize);
                                        dx[xi] = dx[xi] + wdat[ws.idx(co, cil, ky, kx)] * gv;
                                        let wi = ws.idx(co, cil, ky, kx);
                                        dw[wi] = dw[wi] + xd[xi] * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let db = if has_bias {
        let mut db = vec![T::zero(); cout];
        for (co, slot) in db.iter_mut().enumerate() {
            let mut acc = 0f64;
            for ni in 0..n {
                let base = ys.idx(ni, co, 0, 0);
                acc += lane_sum_f64(&dyd[base..base + oh * ow]);
            }
            *slot = T::from_f64(acc);
        }
        Some(Tensor::from_vec(Shape::new(1, cout, 1, 1), db)?)
    } else {
        None
    };

    Ok((
        Tensor::from_vec(xs, dx)?,
        Tensor::from_vec(ws, dw)?,
        db,
    ))
}

// ---------------------------------------------------------------------------
// LayerNorm (normalizes over channels at each spatial location)
// ---------------------------------------------------------------------------

/// Per-location statistics saved by the forward pass; length N·H·W each.
pub struct LayerNormCtx<T: Scalar> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

fn ln_validate<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    let c = x.shape().c();
    let want = Shape::new(1, c, 1, 1);
    if gamma.shape() != want || beta.shape() != want {
        return Err(Error::dim(format!(
            "layer_norm affine shapes {} / {} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(c)
}

pub fn layer_norm_fwd<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCtx<T>)> {
    let c = ln_validate(x, gamma, beta)?;
    if eps <= 0.0 {
        return Err(Error::config("layer_norm eps must be positive"));
    }
    let (n, _, h, w) = x.shape().dims();
    let hw = h * w;
    let xs = x.shape();
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();

    let mut mean = vec![T::zero(); n * hw];
    let mut rstd = vec![T::zero(); n * hw];
    let mut out = vec![T::zero(); xs.numel()];
    let mut accm = vec![0f64; hw];
    let mut accv = vec![0f64; hw];

    let inv_c = 1.0 / c as f64;
    for ni in 0..n {
        accm.fill(0.0);
        for ci in 0..c {
            let base = xs.idx(ni, ci, 0, 0);
            for (a, &v) in accm.iter_mut().zip(&xd[base..base + hw]) {
                *a += v.to_f64();
            }
        }
        for a in accm.iter_mut() {
            *a *= inv_c;
        }
        accv.fill(0.0);
        for ci in 0..c {
            let base = xs.idx(ni, ci, 0, 0);
            for (a, (&v, m)) in accv.iter_mut().zip(xd[base..base + hw].iter().zip(&accm)) {
                let d = v.to_f64() - m;
                *a += d * d;
            }
        }
        for i in 0..hw {
            mean[ni * hw + i] = T::from_f64(accm[i]);
            rstd[ni * hw + i] = T::from_f64(1.0 / (accv[i] * inv_c + eps).sqrt());
        }
        for ci in 0..c {
            let base = xs.idx(ni, ci, 0, 0);
            let g = gd[ci];
            let b = bd[ci];
            let m = &mean[ni * hw..(ni + 1) * hw];
            let r = &rstd[ni * hw..(ni + 1) * hw];
            for i in 0..hw {
                out[base + i] = (xd[base + i] - m[i]) * r[i] * g + b;
            }
        }
    }
    Ok((
        Tensor::from_vec(xs, out)?,
        LayerNormCtx { mean, rstd },
    ))
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    layer_norm_fwd(x, gamma, beta, eps).map(|(y, _)| y)
}

pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    ctx: &LayerNormCtx<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = x.shape().c();
    let (n, _, h, w) = x.shape().dims();
    same_shape(dy, x, "layer_norm upstream gradient")?;
    let hw = h * w;
    let xs = x.shape();
    let xd = x.data();
    let gd = gamma.data();
    let dyd = dy.data();

    let mut dx = vec![T::zero(); xs.numel()];
    let mut dgamma = vec![0f64; c];
    let mut dbeta = vec![0f64; c];
    let mut s1 = vec![0f64; hw];
    let mut s2 = vec![0f64; hw];

    let inv_c = 1.0 / c as f64;
    for ni in 0..n {
        let m = &ctx.mean[ni * hw..(ni + 1) * hw];
        let r = &ctx.rstd[ni * hw..(ni + 1) * hw];
        s1.fill(0.0);
        s2.fill(0.0);
        for ci in 0..c {
            let base = xs.idx(ni, ci, 0, 0);
            let g = gd[ci].to_f64();
            let mut dg = 0f64;
            let mut db = 0f64;
            for i in 0..hw {
                let xh = ((xd[base + i] - m[i]) * r[i]).to_f64();
                let d = dyd[base + i].to_f64();
                let gv = d * g;
                s1[i] += gv;
                s2[i] += gv * xh;
                dg += d * xh;
                db += d;
            }
            dgamma[ci] += dg;
            dbeta[ci] += db;
        }
        for ci in 0..c {
            let base = xs.idx(ni, ci, 0, 0);
            let g = gd[ci].to_f64();
            for i in 0..hw {
                let xh = ((xd[base + i] - m[i]) * r[i]).to_f64();
                let gv = dyd[base + i].to_f64() * g;
                let v = r[i].to_f64() * (gv - s1[i] * inv_c - xh * s2[i] * inv_c);
                dx[base + i] = T::from_f64(v);
            }
        }
    }
    let cshape = Shape::new(1, c, 1, 1);
    Ok((
        Tensor::from_vec(xs, dx)?,
        Tensor::from_vec(cshape, dgamma.into_iter().map(T::from_f64).collect())?,
        Tensor::from_vec(cshape, dbeta.into_iter().map(T::from_f64).collect())?,
    ))
}

// ---------------------------------------------------------------------------
// Pooling and resampling
// ---------------------------------------------------------------------------

/// Mean over all spatial positions of each channel; output (N, C, 1, 1).
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.shape().dims();
    let hw = (h * w) as f64;
    let xs = x.shape();
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c);
    for ni in 0..n {
        for ci in 0..c {
            let base = xs.idx(ni, ci, 0, 0);
            out.push(T::from_f64(lane_sum_f64(&xd[base..base + h * w]) / hw));
        }
    }
    Tensor::from_vec(Shape::new(n, c, 1, 1), out).expect("pooled length matches")
}

pub fn global_avg_pool_backward<T: Scalar>(x_shape: Shape, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x_shape.dims();
    same_shape(dy, &Tensor::zeros(Shape::new(n, c, 1, 1)), "global_avg_pool gradient")?;
    let hw = (h * w) as f64;
    let dyd = dy.data();
    let mut dx = vec![T::zero(); x_shape.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let v = T::from_f64(dyd[ni * c + ci].to_f64() / hw);
            let base = x_shape.idx(ni, ci, 0, 0);
            dx[base..base + h * w].fill(v);
        }
    }
    Tensor::from_vec(x_shape, dx)
}

/// Max pooling with kernel k and stride k; also returns the flat input index
/// of each window's maximum (first maximal element in scan order on ties).
pub fn max_pool_fwd<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = x.shape().dims();
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::dim(format!(
            "max_pool kernel {k} must divide spatial dims {h}x{w}"
        )));
    }
    let (oh, ow) = (h / k, w / k);
    let xs = x.shape();
    let xd = x.data();
    let os = Shape::new(n, c, oh, ow);
    let mut out = Vec::with_capacity(os.numel());
    let mut arg = Vec::with_capacity(os.numel());
    for ni in 0..n {
        for ci in 0..c {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut best_i = xs.idx(ni, ci, ohi * k, owi * k);
                    let mut best = xd[best_i];
                    for ky in 0..k {
                        let row = xs.idx(ni, ci, ohi * k + ky, owi * k);
                        for kx in 0..k {
                            let v = xd[row + kx];
                            if v > best {
                                best = v;
                                best_i = row + kx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::from_vec(os, out)?, arg))
}

pub fn max_pool<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    max_pool_fwd(x, k).map(|(y, _)| y)
}

pub fn max_pool_backward<T: Scalar>(
    x_shape: Shape,
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != dy.numel() {
        return Err(Error::dim("max_pool argmax length mismatch"));
    }
    let mut dx = vec![T::zero(); x_shape.numel()];
    for (&i, &g) in argmax.iter().zip(dy.data()) {
        dx[i] = dx[i] + g;
    }
    Tensor::from_vec(x_shape, dx)
}

/// Nearest-neighbor upsampling by integer factor r: out(h,w) = in(h/r, w/r).
pub fn nearest_upsample<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::config("upsample factor must be at least 1"));
    }
    let (n, c, h, w) = x.shape().dims();
    let os = Shape::new(n, c, h * r, w * r);
    let xs = x.shape();
    let xd = x.data();
    let mut out = vec![T::zero(); os.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for ih in 0..h {
                let src = xs.idx(ni, ci, ih, 0);
                for ky in 0..r {
                    let dst = os.idx(ni, ci, ih * r + ky, 0);
                    for iw in 0..w {
                        let v = xd[src + iw];
                        out[dst + iw * r..dst + (iw + 1) * r].fill(v);
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub fn nearest_upsample_backward<T: Scalar>(
    x_shape: Shape,
    r: usize,
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x_shape.dims();
    let ys = Shape::new(n, c, h * r, w * r);
    same_shape(dy, &Tensor::zeros(ys), "nearest_upsample gradient")?;
    let dyd = dy.data();
    let mut dx = vec![T::zero(); x_shape.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for ih in 0..h {
                let dst = x_shape.idx(ni, ci, ih, 0);
                for ky in 0..r {
                    let src = ys.idx(ni, ci, ih * r + ky, 0);
                    for iw in 0..w {
                        let mut acc = dx[dst + iw];
                        for kx in 0..r {
                            acc = acc + dyd[src + iw * r + kx];
                        }
                        dx[dst + iw] = acc;
                    }
                }
            }
        }
    }
    Tensor::from_vec(x_shape, dx)
}

// ---------------------------------------------------------------------------
// Pixel shuffle and channel plumbing (exact permutations / copies)
// ---------------------------------------------------------------------------

/// (N, C, H, W) -> (N, C/r², H·r, W·r) with
/// out(c, h·r+dy, w·r+dx) = in(c·r² + dy·r + dx, h, w).
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::config("pixel_shuffle factor must be at least 1"));
    }
    let (n, c, h, w) = x.shape().dims();
    if c % (r * r) != 0 {
        return Err(Error::dim(format!(
            "pixel_shuffle needs channels divisible by r²; got C={c}, r={r}"
        )));
    }
    let co = c / (r * r);
    let os = Shape::new(n, co, h * r, w * r);
    let xs = x.shape();
    let xd = x.data();
    let mut out = vec![T::zero(); os.numel()];
    for ni in 0..n {
        for coi in 0..co {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = coi * r * r + dy * r + dx;
                    for ih in 0..h {
                        let src = xs.idx(ni, ci, ih, 0);
                        let dst = os.idx(ni, coi, ih * r + dy, dx);
                        for iw in 0..w {
                            out[dst + iw * r] = xd[src + iw];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// Exact inverse of [`pixel_shuffle`]: (N, C, H, W) -> (N, C·r², H/r, W/r).
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    if r == 0 {
        return Err(Error::config("pixel_unshuffle factor must be at least 1"));
    }
    let (n, c, h, w) = x.shape().dims();
    if h % r != 0 || w % r != 0 {
        return Err(Error::dim(format!(
            "pixel_unshuffle needs spatial dims divisible by r; got {h}x{w}, r={r}"
        )));
    }
    let (oh, ow) = (h / r, w / r);
    let os = Shape::new(n, c * r * r, oh, ow);
    let xs = x.shape();
    let xd = x.data();
    let mut out = vec![T::zero(); os.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let co = ci * r * r + dy * r + dx;
                    for ohi in 0..oh {
                        let src = xs.idx(ni, ci, ohi * r + dy, dx);
                        let dst = os.idx(ni, co, ohi, 0);
                        for owi in 0..ow {
                            out[dst + owi] = xd[src + owi * r];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// Contiguous channel slice [start, start+len).
pub fn narrow_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.shape().dims();
    if len == 0 || start + len > c {
        return Err(Error::dim(format!(
            "channel slice [{start}, {}) out of range for C={c}",
            start + len
        )));
    }
    let os = Shape::new(n, len, h, w);
    let xs = x.shape();
    let xd = x.data();
    let mut out = Vec::with_capacity(os.numel());
    for ni in 0..n {
        let base = xs.idx(ni, start, 0, 0);
        out.extend_from_slice(&xd[base..base + len * h * w]);
    }
    Tensor::from_vec(os, out)
}

pub fn narrow_channels_backward<T: Scalar>(
    x_shape: Shape,
    start: usize,
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, _, h, w) = x_shape.dims();
    let len = dy.shape().c();
    let mut dx = vec![T::zero(); x_shape.numel()];
    let dyd = dy.data();
    for ni in 0..n {
        let dst = x_shape.idx(ni, start, 0, 0);
        let src = dy.shape().idx(ni, 0, 0, 0);
        dx[dst..dst + len * h * w].copy_from_slice(&dyd[src..src + len * h * w]);
    }
    Tensor::from_vec(x_shape, dx)
}

/// Split into `parts` equal contiguous channel blocks.
pub fn channel_split<T: Scalar>(x: &Tensor<T>, parts: usize) -> Result<Vec<Tensor<T>>> {
    let c = x.shape().c();
    if parts == 0 || c % parts != 0 {
        return Err(Error::dim(format!(
            "channel_split needs parts ({parts}) dividing C ({c})"
        )));
    }
    let len = c / parts;
    (0..parts)
        .map(|p| narrow_channels(x, p * len, len))
        .collect()
}

/// Concatenate along the channel axis; inputs must agree on N, H, W.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::dim("concat of zero tensors"))?;
    let (n, _, h, w) = first.shape().dims();
    let mut c_total = 0;
    for t in xs {
        let (tn, tc, th, tw) = t.shape().dims();
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::dim(format!(
                "concat inputs disagree: {} vs {}",
                t.shape(),
                first.shape()
            )));
        }
        c_total += tc;
    }
    let os = Shape::new(n, c_total, h, w);
    let mut out = Vec::with_capacity(os.numel());
    for ni in 0..n {
        for t in xs {
            let ts = t.shape();
            let base = ts.idx(ni, 0, 0, 0);
            out.extend_from_slice(&t.data()[base..base + ts.c() * h * w]);
        }
    }
    Tensor::from_vec(os, out)
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

/// True when `b` broadcasts over `a`'s spatial dims: b is (N, C, 1, 1).
fn is_spatial_broadcast(a: Shape, b: Shape) -> bool {
    b.n() == a.n() && b.c() == a.c() && b.h() == 1 && b.w() == 1 && a.numel() != b.numel()
}

/// Elementwise product; `b` may be (N, C, 1, 1) against a's (N, C, H, W).
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x * y)
            .collect();
        return Tensor::from_vec(a.shape(), data);
    }
    if is_spatial_broadcast(a.shape(), b.shape()) {
        let (n, c, h, w) = a.shape().dims();
        let hw = h * w;
        let mut out = Vec::with_capacity(a.numel());
        for ni in 0..n {
            for ci in 0..c {
                let s = b.data()[ni * c + ci];
                let base = a.shape().idx(ni, ci, 0, 0);
                out.extend(a.data()[base..base + hw].iter().map(|&v| v * s));
            }
        }
        return Tensor::from_vec(a.shape(), out);
    }
    Err(Error::dim(format!(
        "mul shapes {} and {} are incompatible",
        a.shape(),
        b.shape()
    )))
}

pub fn mul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    same_shape(dy, a, "mul upstream gradient")?;
    if a.shape() == b.shape() {
        let da = mul(dy, b)?;
        let db = mul(dy, a)?;
        return Ok((da, db));
    }
    if is_spatial_broadcast(a.shape(), b.shape()) {
        let da = mul(dy, b)?;
        let (n, c, h, w) = a.shape().dims();
        let hw = h * w;
        let mut db = Vec::with_capacity(n * c);
        for ni in 0..n {
            for ci in 0..c {
                let base = a.shape().idx(ni, ci, 0, 0);
                let mut acc = 0f64;
                let ad = &a.data()[base..base + hw];
                let gd = &dy.data()[base..base + hw];
                let chunks = hw / LANES;
                let mut lanes = [0f64; LANES];
                for i in 0..chunks {
                    let o = i * LANES;
                    for (l, s) in lanes.iter_mut().enumerate() {
                        *s += (ad[o + l] * gd[o + l]).to_f64();
                    }
                }
                for v in lanes {
                    acc += v;
                }
                for i in chunks * LANES..hw {
                    acc += (ad[i] * gd[i]).to_f64();
                }
                db.push(T::from_f64(acc));
            }
        }
        return Ok((da, Tensor::from_vec(b.shape(), db)?));
    }
    Err(Error::dim("mul_backward shape mismatch"))
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "add")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x + y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "sub")?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x - y)
        .collect();
    Tensor::from_vec(a.shape(), data)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, s: f64) -> Tensor<T> {
    let f = T::from_f64(s);
    let data = a.data().iter().map(|&x| x * f).collect();
    Tensor::from_vec(a.shape(), data).expect("same length")
}

pub fn abs<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().map(|&x| x.abs()).collect();
    Tensor::from_vec(a.shape(), data).expect("same length")
}

/// d|x|/dx with the subgradient 0 at x = 0.
pub fn abs_backward<T: Scalar>(a: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(dy, a, "abs upstream gradient")?;
    let data = a
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&x, &g)| {
            if x > T::zero() {
                g
            } else if x < T::zero() {
                -g
            } else {
                T::zero()
            }
        })
        .collect();
    Tensor::from_vec(a.shape(), data)
}

/// Mean over every element, returned as a (1,1,1,1) scalar tensor.
pub fn mean_all<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let m = lane_sum_f64(a.data()) / a.numel() as f64;
    Tensor::scalar(T::from_f64(m))
}

pub fn sum_all<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(T::from_f64(lane_sum_f64(a.data())))
}

// ---------------------------------------------------------------------------
// Padding, cropping, clamping
// ---------------------------------------------------------------------------

/// Mirror index without edge duplication, defined for any offset.
pub fn reflect_idx(j: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = j % period;
    if m < 0 {
        m += period;
    }
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pad on the bottom and right edges only.
pub fn reflect_pad_br<T: Scalar>(x: &Tensor<T>, pb: usize, pr: usize) -> Tensor<T> {
    let (n, c, h, w) = x.shape().dims();
    let os = Shape::new(n, c, h + pb, w + pr);
    let xs = x.shape();
    let xd = x.data();
    let mut out = vec![T::zero(); os.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..h + pb {
                let ih = reflect_idx(oh as isize, h);
                let src = xs.idx(ni, ci, ih, 0);
                let dst = os.idx(ni, ci, oh, 0);
                for ow in 0..w + pr {
                    out[dst + ow] = xd[src + reflect_idx(ow as isize, w)];
                }
            }
        }
    }
    Tensor::from_vec(os, out).expect("padded length matches")
}

pub fn reflect_pad_br_backward<T: Scalar>(
    x_shape: Shape,
    pb: usize,
    pr: usize,
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x_shape.dims();
    let ys = Shape::new(n, c, h + pb, w + pr);
    same_shape(dy, &Tensor::zeros(ys), "reflect_pad gradient")?;
    let dyd = dy.data();
    let mut dx = vec![T::zero(); x_shape.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..h + pb {
                let ih = reflect_idx(oh as isize, h);
                let src = ys.idx(ni, ci, oh, 0);
                let dst = x_shape.idx(ni, ci, ih, 0);
                for ow in 0..w + pr {
                    let iw = reflect_idx(ow as isize, w);
                    dx[dst + iw] = dx[dst + iw] + dyd[src + ow];
                }
            }
        }
    }
    Tensor::from_vec(x_shape, dx)
}

/// Keep the top-left h×w region.
pub fn crop_tl<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, c, xh, xw) = x.shape().dims();
    if h > xh || w > xw || h == 0 || w == 0 {
        return Err(Error::dim(format!(
            "crop {h}x{w} out of range for {xh}x{xw}"
        )));
    }
    let os = Shape::new(n, c, h, w);
    let xs = x.shape();
    let xd = x.data();
    let mut out = Vec::with_capacity(os.numel());
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                let src = xs.idx(ni, ci, hi, 0);
                out.extend_from_slice(&xd[src..src + w]);
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub fn crop_tl_backward<T: Scalar>(x_shape: Shape, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, _, _) = x_shape.dims();
    let (dn, dc, dh, dw) = dy.shape().dims();
    if (dn, dc) != (n, c) {
        return Err(Error::dim("crop gradient channel mismatch"));
    }
    let mut dx = vec![T::zero(); x_shape.numel()];
    let dyd = dy.data();
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..dh {
                let src = dy.shape().idx(ni, ci, hi, 0);
                let dst = x_shape.idx(ni, ci, hi, 0);
                dx[dst..dst + dw].copy_from_slice(&dyd[src..src + dw]);
            }
        }
    }
    Tensor::from_vec(x_shape, dx)
}

/// Clamp into [0, 1]; used only at the image boundary, never in the loss path.
pub fn clamp01<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        if v < T::zero() {
            T::zero()
        } else if v > T::one() {
            T::one()
        } else {
            v
        }
    })
}
