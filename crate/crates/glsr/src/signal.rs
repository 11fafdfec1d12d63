//! 2-D discrete Fourier transform and the combined spatial+frequency loss.
//!
//! The forward transform is unnormalized; the inverse carries the 1/(H·W)
//! factor. Power-of-two extents take an iterative radix-2 path with per-step
//! trig twiddles, everything else falls back to a direct O(n²) DFT with
//! argument reduction, so both paths hold f64 accuracy at small sizes.

use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{ops, Scalar, Shape, Tensor};

/// Smoothing added under the square root of the complex modulus so the
/// frequency loss stays differentiable at zero spectrum difference.
pub const MODULUS_EPS: f64 = 1e-12;

/// Complex-valued H×W spectrum, split into real and imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPlane {
    pub h: usize,
    pub w: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexPlane {
    pub fn zeros(h: usize, w: usize) -> Self {
        ComplexPlane { h, w, re: vec![0.0; h * w], im: vec![0.0; h * w] }
    }

    pub fn at(&self, u: usize, v: usize) -> (f64, f64) {
        let i = u * self.w + v;
        (self.re[i], self.im[i])
    }
}

/// Weighting of the loss terms: L = MAE + gamma · frequency term.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { gamma: 0.05 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!(
                "loss gamma must be finite and non-negative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// 1-D kernels
// ---------------------------------------------------------------------------

fn radix2(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        let mut i = 0;
        while i < n {
            for k in 0..half {
                // Per-butterfly trig keeps twiddles at full f64 accuracy.
                let (s, c) = (ang * k as f64).sin_cos();
                let a = i + k;
                let b = a + half;
                let vr = re[b] * c - im[b] * s;
                let vi = re[b] * s + im[b] * c;
                re[b] = re[a] - vr;
                im[b] = im[a] - vi;
                re[a] += vr;
                im[a] += vi;
            }
            i += len;
        }
        len <<= 1;
    }
}

fn direct_dft(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut or = vec![0.0; n];
    let mut oi = vec![0.0; n];
    for (k, (orr, oii)) in or.iter_mut().zip(oi.iter_mut()).enumerate() {
        let mut sr = 0.0;
        let mut si = 0.0;
        for t in 0..n {
            // Reduce k·t mod n before the trig call to keep the angle small.
            let ang = sign * 2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
            let (s, c) = ang.sin_cos();
            sr += re[t] * c - im[t] * s;
            si += re[t] * s + im[t] * c;
        }
        *orr = sr;
        *oii = si;
    }
    re.copy_from_slice(&or);
    im.copy_from_slice(&oi);
}

fn fft_1d(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(re, im, inverse);
    } else {
        direct_dft(re, im, inverse);
    }
}

fn transform_2d(p: &mut ComplexPlane, inverse: bool, force_direct: bool) {
    let (h, w) = (p.h, p.w);
    let axis = |re: &mut [f64], im: &mut [f64]| {
        if force_direct {
            direct_dft(re, im, inverse);
        } else {
            fft_1d(re, im, inverse);
        }
    };
    for r in 0..h {
        axis(&mut p.re[r * w..(r + 1) * w], &mut p.im[r * w..(r + 1) * w]);
    }
    let mut cr = vec![0.0; h];
    let mut ci = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            cr[r] = p.re[r * w + c];
            ci[r] = p.im[r * w + c];
        }
        axis(&mut cr, &mut ci);
        for r in 0..h {
            p.re[r * w + c] = cr[r];
            p.im[r * w + c] = ci[r];
        }
    }
}

// ---------------------------------------------------------------------------
// 2-D entry points
// ---------------------------------------------------------------------------

/// Unnormalized forward transform of a real plane:
/// X[u,v] = Σ x[h,w]·exp(−2πi(uh/H + vw/W)).
pub fn fft2d(x: &[f64], h: usize, w: usize) -> ComplexPlane {
    assert_eq!(x.len(), h * w, "plane length must equal H*W");
    let mut p = ComplexPlane { h, w, re: x.to_vec(), im: vec![0.0; h * w] };
    transform_2d(&mut p, false, false);
    p
}

/// Forward transform through the direct O(n²) path regardless of extent;
/// used to cross-check the radix-2 path.
pub fn fft2d_direct(x: &[f64], h: usize, w: usize) -> ComplexPlane {
    assert_eq!(x.len(), h * w, "plane length must equal H*W");
    let mut p = ComplexPlane { h, w, re: x.to_vec(), im: vec![0.0; h * w] };
    transform_2d(&mut p, false, true);
    p
}

/// Inverse transform with the 1/(H·W) factor; returns the real part.
pub fn ifft2d(spec: &ComplexPlane) -> Vec<f64> {
    let mut p = spec.clone();
    transform_2d(&mut p, true, false);
    let norm = 1.0 / (p.h * p.w) as f64;
    p.re.iter().map(|v| v * norm).collect()
}

/// Unnormalized transform of a complex plane in either direction.
pub fn fft2d_complex(spec: &ComplexPlane, inverse: bool) -> ComplexPlane {
    let mut p = spec.clone();
    transform_2d(&mut p, inverse, false);
    p
}

// ---------------------------------------------------------------------------
// Frequency loss kernels (consumed by the graph's FreqL1 node)
// ---------------------------------------------------------------------------

/// Mean smoothed modulus over all DFT bins of every (n, c) plane of `x`.
/// Returns the scalar and the per-plane spectra for the backward pass.
pub fn freq_l1_fwd<T: Scalar>(x: &Tensor<T>) -> (f64, Vec<ComplexPlane>) {
    let (n, c, h, w) = x.shape().dims();
    let hw = h * w;
    let xs = x.shape();
    let xd = x.data();
    let mut spectra = Vec::with_capacity(n * c);
    let mut total = 0.0f64;
    let mut plane = vec![0.0f64; hw];
    for ni in 0..n {
        for ci in 0..c {
            let base = xs.idx(ni, ci, 0, 0);
            for (dst, &src) in plane.iter_mut().zip(&xd[base..base + hw]) {
                *dst = src.to_f64();
            }
            let spec = fft2d(&plane, h, w);
            for (re, im) in spec.re.iter().zip(&spec.im) {
                total += (re * re + im * im + MODULUS_EPS).sqrt();
            }
            spectra.push(spec);
        }
    }
    (total / x.numel() as f64, spectra)
}

/// d(mean modulus)/dx via the inverse transform of the per-bin direction
/// G = (re, im)/modulus: dL/dx = Re(unnormalized IDFT(G)) · upstream / numel.
pub fn freq_l1_backward<T: Scalar>(
    x_shape: Shape,
    spectra: &[ComplexPlane],
    upstream: f64,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = x_shape.dims();
    if spectra.len() != n * c {
        return Err(Error::dim(format!(
            "saved spectra count {} does not match {} planes",
            spectra.len(),
            n * c
        )));
    }
    let hw = h * w;
    let s = upstream / x_shape.numel() as f64;
    let mut dx = vec![T::zero(); x_shape.numel()];
    for (pi, spec) in spectra.iter().enumerate() {
        let mut g = ComplexPlane::zeros(h, w);
        for i in 0..hw {
            let m = (spec.re[i] * spec.re[i] + spec.im[i] * spec.im[i] + MODULUS_EPS).sqrt();
            // Conjugate here turns the forward transform below into the
            // unnormalized inverse: Re(IDFT(G)) = Re(FFT(conj(G))).
            g.re[i] = spec.re[i] / m * s;
            g.im[i] = -spec.im[i] / m * s;
        }
        let back = fft2d_complex(&g, false);
        let base = pi * hw;
        for i in 0..hw {
            dx[base + i] = T::from_f64(back.re[i]);
        }
    }
    Tensor::from_vec(x_shape, dx)
}

// ---------------------------------------------------------------------------
// Combined loss
// ---------------------------------------------------------------------------

fn loss_preconditions<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    if sr.shape() != hr.shape() {
        return Err(Error::dim(format!(
            "loss inputs differ in shape: {} vs {}",
            sr.shape(),
            hr.shape()
        )));
    }
    if !sr.is_finite() || !hr.is_finite() {
        return Err(Error::Numeric("loss input contains NaN or Inf".into()));
    }
    Ok(())
}

/// Differentiable L = mean|sr−hr| + gamma · mean complex modulus of the
/// per-bin DFT difference. The DFT is taken of (sr−hr) directly, which by
/// linearity equals the difference of the two spectra.
pub fn sr_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    sr: Var,
    hr: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    loss_preconditions(g.value(sr), g.value(hr), cfg)?;
    let diff = g.sub(sr, hr)?;
    let a = g.abs(diff);
    let mae = g.mean_all(a);
    if cfg.gamma == 0.0 {
        return Ok(mae);
    }
    let freq = g.freq_l1(diff);
    let weighted = g.scale(freq, cfg.gamma);
    g.add(mae, weighted)
}

/// Loss value without gradient bookkeeping.
pub fn sr_loss<T: Scalar>(sr: &Tensor<T>, hr: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    loss_preconditions(sr, hr, cfg)?;
    let diff = ops::sub(sr, hr)?;
    let mae = ops::mean_all(&ops::abs(&diff)).data()[0].to_f64();
    if cfg.gamma == 0.0 {
        return Ok(mae);
    }
    let (freq, _) = freq_l1_fwd(&diff);
    Ok(mae + cfg.gamma * freq)
}
