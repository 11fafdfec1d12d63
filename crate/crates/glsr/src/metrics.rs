//! Quality metrics on the luma channel: PSNR and SSIM.
//!
//! Images are converted to BT.601 studio-swing Y (range [16, 235]) and the
//! metrics run on that single plane, the standard protocol in the
//! super-resolution literature. All arithmetic is f64.

use crate::error::{Error, Result};
use crate::io::ImageU8;
use crate::tensor::{Scalar, Tensor};

/// A luma plane; values nominally in [16, 235] but stored unquantized.
#[derive(Debug, Clone, PartialEq)]
pub struct YPlane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl YPlane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::dim(format!("luma plane needs positive dims, got {h}x{w}")));
        }
        if data.len() != h * w {
            return Err(Error::dim(format!(
                "luma plane data holds {} values, expected {}",
                data.len(),
                h * w
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("luma plane contains non-finite values".into()));
        }
        Ok(YPlane { h, w, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Remove `border` pixels from every side.
    pub fn crop_border(&self, border: usize) -> Result<YPlane> {
        if 2 * border >= self.h || 2 * border >= self.w {
            return Err(Error::dim(format!(
                "crop of {border} per side exhausts a {}x{} plane",
                self.h, self.w
            )));
        }
        let (h, w) = (self.h - 2 * border, self.w - 2 * border);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            let row = (y + border) * self.w + border;
            data.extend_from_slice(&self.data[row..row + w]);
        }
        Ok(YPlane { h, w, data })
    }
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    16.0 + (65.481 * r + 128.553 * g + 24.966 * b) / 255.0
}

/// BT.601 studio-swing conversion, no rounding: Y ∈ [16, 235] exactly for
/// inputs in [0, 255].
pub fn rgb_to_y(img: &ImageU8) -> YPlane {
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = img.rgb_at(y, x);
            data.push(luma(r as f64, g as f64, b as f64));
        }
    }
    YPlane { h, w, data }
}

/// Luma from one RGB tensor sample whose values live in [0, 1].
///
/// Values are clamped to [0, 1] (the image boundary is the only place the
/// network output is clamped) and rescaled to [0, 255]. With `quantize` the
/// channels are additionally rounded to whole 8-bit levels first, matching
/// what a PPM write would store.
pub fn tensor_to_y<T: Scalar>(t: &Tensor<T>, sample: usize, quantize: bool) -> Result<YPlane> {
    let (n, c, h, w) = t.shape().dims();
    if c != 3 {
        return Err(Error::dim(format!("luma conversion needs 3 channels, got {c}")));
    }
    if sample >= n {
        return Err(Error::dim(format!("sample {sample} out of range for batch of {n}")));
    }
    let mut data = Vec::with_capacity(h * w);
    let channel = |ch: usize, y: usize, x: usize| -> f64 {
        let v = t.data()[t.shape().idx(sample, ch, y, x)].to_f64();
        let v = v.clamp(0.0, 1.0) * 255.0;
        if quantize {
            v.round()
        } else {
            v
        }
    };
    for y in 0..h {
        for x in 0..w {
            data.push(luma(channel(0, y, x), channel(1, y, x), channel(2, y, x)));
        }
    }
    YPlane::new(h, w, data)
}

/// Peak signal-to-noise ratio in dB over the planes with `crop` pixels
/// removed from each border first. Identical planes return +infinity.
pub fn psnr(a: &YPlane, b: &YPlane, crop: usize) -> Result<f64> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::dim(format!(
            "psnr needs equal shapes, got {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    let (a, b) = (a.crop_border(crop)?, b.crop_border(crop)?);
    let mut sq = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = x - y;
        sq += d * d;
    }
    let mse = sq / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

/// 11×11 Gaussian weights, σ = 1.5, normalized to sum exactly 1.
fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over all fully contained 11×11 windows.
pub fn ssim(a: &YPlane, b: &YPlane) -> Result<f64> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::dim(format!(
            "ssim needs equal shapes, got {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    if a.h < SSIM_WINDOW || a.w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.h, a.w
        )));
    }
    let win = gaussian_window();
    let c1 = (0.01 * 255.0) * (0.01 * 255.0);
    let c2 = (0.03 * 255.0) * (0.03 * 255.0);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for oy in 0..=a.h - SSIM_WINDOW {
        for ox in 0..=a.w - SSIM_WINDOW {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let g = win[wy * SSIM_WINDOW + wx];
                    let va = a.at(oy + wy, ox + wx);
                    let vb = b.at(oy + wy, ox + wx);
                    mu_a += g * va;
                    mu_b += g * vb;
                    aa += g * va * va;
                    bb += g * vb * vb;
                    ab += g * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
