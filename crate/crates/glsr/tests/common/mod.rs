//! Independent reference implementations used to validate the library.
//!
//! Everything here is written as a direct transcription of the underlying
//! definition (straight loops, no shared factoring with the crate code), so
//! agreement between the two is meaningful evidence of correctness.

#![allow(dead_code)]

use glsr::tensor::{Shape, Tensor};

/// Grouped 2-D convolution computed one output element at a time with an
/// explicit zero-padding test per tap.
pub fn conv2d_naive(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor<f64> {
    let (n, cin, h, wd) = x.shape().dims();
    let (cout, cpg, k, _) = w.shape().dims();
    assert_eq!(cpg, cin / groups, "weight/group mismatch");
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let os = Shape::new(n, cout, oh, ow);
    let mut out = vec![0.0f64; os.numel()];
    let copg = cout / groups;
    for ni in 0..n {
        for co in 0..cout {
            let g = co / copg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = match b {
                        Some(bt) => bt.at(0, co, 0, 0),
                        None => 0.0,
                    };
                    for cil in 0..cpg {
                        let ci = g * cpg + cil;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(ni, ci, iy as usize, ix as usize)
                                        * w.at(co, cil, ky, kx);
                                }
                            }
                        }
                    }
                    out[os.idx(ni, co, oy, ox)] = acc;
                }
            }
        }
    }
    Tensor::from_vec(os, out).unwrap()
}

/// Direct O(n^2) 2-D DFT: X[u,v] = sum x[y,x] exp(-2 pi i (uy/h + vx/w)).
pub fn dft2d_direct(x: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = vec![0.0f64; h * w];
    let mut im = vec![0.0f64; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut sr = 0.0;
            let mut si = 0.0;
            for y in 0..h {
                for xi in 0..w {
                    let ang = -2.0 * std::f64::consts::PI
                        * (u as f64 * y as f64 / h as f64 + v as f64 * xi as f64 / w as f64);
                    sr += x[y * w + xi] * ang.cos();
                    si += x[y * w + xi] * ang.sin();
                }
            }
            re[u * w + v] = sr;
            im[u * w + v] = si;
        }
    }
    (re, im)
}

/// Mean smoothed DFT modulus of every (n, c) plane; the frequency term of
/// the training loss, evaluated through the direct transform.
pub fn freq_term_direct(x: &Tensor<f64>) -> f64 {
    let (n, c, h, w) = x.shape().dims();
    let mut total = 0.0f64;
    for ni in 0..n {
        for ci in 0..c {
            let mut plane = Vec::with_capacity(h * w);
            for y in 0..h {
                for xi in 0..w {
                    plane.push(x.at(ni, ci, y, xi));
                }
            }
            let (re, im) = dft2d_direct(&plane, h, w);
            for i in 0..h * w {
                total += (re[i] * re[i] + im[i] * im[i] + glsr::signal::MODULUS_EPS).sqrt();
            }
        }
    }
    total / x.numel() as f64
}

/// PSNR over row-major planes with `crop` border pixels excluded, computed
/// with plain nested loops.
pub fn psnr_direct(a: &[f64], b: &[f64], h: usize, w: usize, crop: usize) -> f64 {
    let mut sq = 0.0f64;
    let mut n = 0usize;
    for y in crop..h - crop {
        for x in crop..w - crop {
            let d = a[y * w + x] - b[y * w + x];
            sq += d * d;
            n += 1;
        }
    }
    let mse = sq / n as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (255.0 * 255.0 / mse).log10()
}

/// SSIM over all fully contained 11x11 windows, Gaussian sigma 1.5.
/// Window statistics use explicit two-pass central moments, unlike the
/// library's one-pass E[x^2] - mu^2 form.
pub fn ssim_direct(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    const WIN: usize = 11;
    const SIGMA: f64 = 1.5;
    let mut g = [0.0f64; WIN * WIN];
    let mut sum = 0.0;
    for y in 0..WIN {
        for x in 0..WIN {
            let dy = y as f64 - 5.0;
            let dx = x as f64 - 5.0;
            let v = (-(dx * dx + dy * dy) / (2.0 * SIGMA * SIGMA)).exp();
            g[y * WIN + x] = v;
            sum += v;
        }
    }
    for v in &mut g {
        *v /= sum;
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);

    let mut total = 0.0f64;
    let mut count = 0usize;
    for oy in 0..=h - WIN {
        for ox in 0..=w - WIN {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for wy in 0..WIN {
                for wx in 0..WIN {
                    let gw = g[wy * WIN + wx];
                    mu_a += gw * a[(oy + wy) * w + ox + wx];
                    mu_b += gw * b[(oy + wy) * w + ox + wx];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for wy in 0..WIN {
                for wx in 0..WIN {
                    let gw = g[wy * WIN + wx];
                    let da = a[(oy + wy) * w + ox + wx] - mu_a;
                    let db = b[(oy + wy) * w + ox + wx] - mu_b;
                    var_a += gw * da * da;
                    var_b += gw * db * db;
                    cov += gw * da * db;
                }
            }
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn keys_ref(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
fn reflect_ref(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Bicubic downsampling evaluated as one non-separated 4x4 tap sum per
/// output pixel (the library factors it into two 1-D passes).
pub fn bicubic_direct(x: &Tensor<f64>, s: usize) -> Tensor<f64> {
    let (n, c, h, w) = x.shape().dims();
    assert!(h % s == 0 && w % s == 0);
    let (oh, ow) = (h / s, w / s);
    let os = Shape::new(n, c, oh, ow);
    let mut out = vec![0.0f64; os.numel()];
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..oh {
                let cy = (oy as f64 + 0.5) * s as f64 - 0.5;
                let by = cy.floor() as isize;
                for ox in 0..ow {
                    let cx = (ox as f64 + 0.5) * s as f64 - 0.5;
                    let bx = cx.floor() as isize;
                    let mut acc = 0.0;
                    for dy in -1..=2isize {
                        for dx in -1..=2isize {
                            let wy = keys_ref(cy - (by + dy) as f64);
                            let wx = keys_ref(cx - (bx + dx) as f64);
                            acc += wy
                                * wx
                                * x.at(ni, ci, reflect_ref(by + dy, h), reflect_ref(bx + dx, w));
                        }
                    }
                    out[os.idx(ni, ci, oy, ox)] = acc;
                }
            }
        }
    }
    Tensor::from_vec(os, out).unwrap()
}

/// Uniformly random tensor in (-amp, amp) from a seeded generator.
pub fn rand_tensor(shape: Shape, amp: f64, seed: u64) -> Tensor<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::rand_uniform(shape, amp, &mut rng)
}

/// max |a - b| / ||b||_inf, the scale-free disagreement of two tensors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-30);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

/// 200 random convolutions against [`conv2d_naive`] in both precisions.
/// Returns the worst (double, single) relative errors.
pub fn check_conv_oracle() -> Result<(f64, f64), String> {
    use glsr::tensor::ops::conv2d;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst64 = 0.0f64;
    let mut worst32 = 0.0f64;
    for case in 0..200 {
        // Shapes bounded by (2, 8, 16, 16); every kernel/stride/pad/group
        // combination the network itself can produce, and then some.
        let n = rng.gen_range(1..=2);
        let groups = [1usize, 2, 4][rng.gen_range(0..3)];
        let cpg_in = rng.gen_range(1..=2);
        let cpg_out = rng.gen_range(1..=2);
        let cin = groups * cpg_in;
        let cout = groups * cpg_out;
        let k = if rng.gen_bool(0.5) { 1 } else { 3 };
        let pad = rng.gen_range(0..=if k == 3 { 1 } else { 0 });
        let stride = rng.gen_range(1..=2);
        let h = rng.gen_range(k.max(3)..=16);
        let w = rng.gen_range(k.max(3)..=16);
        let with_bias = rng.gen_bool(0.5);

        let x = Tensor::<f64>::rand_uniform(Shape::new(n, cin, h, w), 1.0, &mut rng);
        let wt = Tensor::<f64>::rand_uniform(Shape::new(cout, cpg_in, k, k), 1.0, &mut rng);
        let b = if with_bias {
            Some(Tensor::<f64>::rand_uniform(Shape::new(1, cout, 1, 1), 1.0, &mut rng))
        } else {
            None
        };

        let expect = conv2d_naive(&x, &wt, b.as_ref(), stride, pad, groups);

        let got64 = conv2d(&x, &wt, b.as_ref(), stride, pad, groups)
            .map_err(|e| format!("case {case}: {e}"))?;
        let e64 = rel_err(got64.data(), expect.data());
        worst64 = worst64.max(e64);
        if e64 > 1e-12 {
            return Err(format!("case {case}: double rel err {e64}"));
        }

        let got32 = conv2d(
            &x.to_f32(),
            &wt.to_f32(),
            b.as_ref().map(|t| t.to_f32()).as_ref(),
            stride,
            pad,
            groups,
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        let got32d: Vec<f64> = got32.data().iter().map(|&v| v as f64).collect();
        let e32 = rel_err(&got32d, expect.data());
        worst32 = worst32.max(e32);
        if e32 > 1e-6 {
            return Err(format!("case {case}: single rel err {e32}"));
        }
    }
    Ok((worst64, worst32))
}

/// 50 random 32x32 luma pairs against the direct PSNR/SSIM oracles.
/// Returns the worst absolute differences.
pub fn check_metric_oracles() -> Result<(f64, f64), String> {
    use glsr::metrics::{psnr, ssim, YPlane};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4096);
    let mut worst_p = 0.0f64;
    let mut worst_s = 0.0f64;
    for case in 0..50 {
        let (h, w) = (32, 32);
        // Correlated planes so SSIM spans a useful range.
        let a: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..255.0)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|v| (v + rng.gen_range(-30.0..30.0)).clamp(0.0, 255.0))
            .collect();
        let pa = YPlane::new(h, w, a.clone()).map_err(|e| e.to_string())?;
        let pb = YPlane::new(h, w, b.clone()).map_err(|e| e.to_string())?;

        let crop = [0usize, 2, 4][case % 3];
        let p_lib = psnr(&pa, &pb, crop).map_err(|e| e.to_string())?;
        let p_ref = psnr_direct(&a, &b, h, w, crop);
        let dp = (p_lib - p_ref).abs();
        worst_p = worst_p.max(dp);
        if dp > 1e-7 {
            return Err(format!("case {case}: psnr {p_lib} vs {p_ref}"));
        }

        let s_lib = ssim(&pa, &pb).map_err(|e| e.to_string())?;
        let s_ref = ssim_direct(&a, &b, h, w);
        let ds = (s_lib - s_ref).abs();
        worst_s = worst_s.max(ds);
        if ds > 1e-7 {
            return Err(format!("case {case}: ssim {s_lib} vs {s_ref}"));
        }
    }
    Ok((worst_p, worst_s))
}

/// The loss's frequency term against the direct O(n^2) DFT on 8x8 planes.
/// Returns the worst relative error.
pub fn check_freq_oracle() -> Result<f64, String> {
    use glsr::signal::freq_l1_fwd;
    let mut worst = 0.0f64;
    for seed in 0..8u64 {
        let x = rand_tensor(Shape::new(1, 3, 8, 8), 1.0, 900 + seed);
        let (lib, _) = freq_l1_fwd(&x);
        let reference = freq_term_direct(&x);
        let rel = (lib - reference).abs() / reference.abs();
        worst = worst.max(rel);
        if rel > 1e-8 {
            return Err(format!("seed {seed}: {lib} vs {reference}, rel {rel}"));
        }
    }
    Ok(worst)
}
