//! Training at desk scale: Adam, the learning-rate schedule, bicubic
//! degradation, procedural data, patch sampling, and the training loop.
//!
//! Everything is seeded and single-threaded; two runs with the same
//! configuration produce bitwise-identical weights, losses, and reports.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{image_to_tensor, save_weights, ImageU8};
use crate::metrics::{psnr, rgb_to_y, ssim, tensor_to_y};
use crate::nn::model::{bind_weights, model_forward, model_graph};
use crate::nn::{init_weights, ModelConfig, WeightStore};
use crate::signal::{sr_loss_graph, LossConfig};
use crate::tensor::graph::Graph;
use crate::tensor::{ops, Scalar, Shape, Tensor};

/// Learning-rate schedule shape. Cosine is the default; the step decay is a
/// four-stage geometric staircase between the same endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[default]
    Cosine,
    StepDecay,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub schedule: Schedule,
    pub total_steps: usize,
    pub batch: usize,
    /// HR patch edge; must be divisible by the scale with an LR patch
    /// divisible by 8 (the deepest pooling branch).
    pub patch_hr: usize,
    /// Frequency-loss weight.
    pub gamma: f64,
    pub seed: u64,
    /// Evaluate every this many steps (0 = only at the end).
    pub eval_interval: usize,
    /// Random flips and 90-degree rotations on sampled patches.
    pub augment: bool,
}

impl TrainConfig {
    /// Defaults for a given scale: LR patch 32, so the HR patch is 32 s.
    pub fn for_scale(scale: usize) -> Self {
        TrainConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps_adam: 1e-8,
            lr_start: 1e-3,
            lr_end: 1e-5,
            schedule: Schedule::Cosine,
            total_steps: 1500,
            batch: 8,
            patch_hr: 32 * scale,
            gamma: 0.05,
            seed: 0,
            eval_interval: 500,
            augment: true,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        model.validate()?;
        if self.total_steps == 0 {
            return Err(Error::config("total_steps must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("batch must be at least 1"));
        }
        if self.patch_hr == 0 || self.patch_hr % model.scale != 0 {
            return Err(Error::config(format!(
                "patch_hr {} must be a positive multiple of scale {}",
                self.patch_hr, model.scale
            )));
        }
        if (self.patch_hr / model.scale) % 8 != 0 {
            return Err(Error::config(format!(
                "LR patch {} must be divisible by 8",
                self.patch_hr / model.scale
            )));
        }
        if !(self.lr_start >= self.lr_end && self.lr_end > 0.0) {
            return Err(Error::config(format!(
                "need lr_start >= lr_end > 0, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::config("eps_adam must be positive"));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::config(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// Learning rate used at `step` (0-based). Both endpoints are exact:
/// `lr_at(0) == lr_start` and `lr_at(total_steps) == lr_end`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let t = cfg.total_steps;
    if step == 0 {
        return cfg.lr_start;
    }
    if step >= t {
        return cfg.lr_end;
    }
    match cfg.schedule {
        Schedule::Cosine => {
            let phase = PI * step as f64 / t as f64;
            cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + phase.cos())
        }
        Schedule::StepDecay => {
            // Four equal stages; stage k runs at lr_start * ratio^(k/4).
            let stage = (4 * step / t).min(4);
            cfg.lr_start * (cfg.lr_end / cfg.lr_start).powf(stage as f64 / 4.0)
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First and second moments per parameter plus the Adam hyperparameters,
/// kept in f64 regardless of the training precision.
pub struct AdamState {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Scalar>(store: &WeightStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let mut m = IndexMap::with_capacity(store.len());
        let mut v = IndexMap::with_capacity(store.len());
        for (path, t) in store.iter() {
            m.insert(path.clone(), vec![0.0; t.numel()]);
            v.insert(path.clone(), vec![0.0; t.numel()]);
        }
        AdamState { t: 0, beta1, beta2, eps, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update with bias correction: m ← β₁m + (1−β₁)g,
/// v ← β₂v + (1−β₂)g², θ ← θ − lr·m̂/(√v̂ + ε). A non-finite gradient
/// aborts the step before any weight or state changes.
pub fn adam_step<T: Scalar>(
    store: &mut WeightStore<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    for (path, param) in store.iter() {
        let g = grads
            .get(path)
            .ok_or_else(|| Error::Structure(format!("missing gradient for {path}")))?;
        if g.shape() != param.shape() {
            return Err(Error::dim(format!(
                "gradient shape {} does not match parameter {path} {}",
                g.shape(),
                param.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {path}; step aborted"
            )));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (path, param) in store.iter_mut() {
        let g = &grads[path.as_str()];
        let m = state.m.get_mut(path.as_str()).expect("state mirrors store");
        let v = state.v.get_mut(path.as_str()).expect("state mirrors store");
        let data = param.data_mut();
        for i in 0..data.len() {
            let gi = g.data()[i].to_f64();
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let theta = data[i].to_f64() - lr * mhat / (vhat.sqrt() + state.eps);
            data[i] = T::from_f64(theta);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bicubic degradation
// ---------------------------------------------------------------------------

/// Keys cubic kernel with a = -0.5 (the common photographic choice).
fn keys(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

fn resample_axis(src: &[f64], n: usize, stride: usize, out: &mut [f64], s: usize) {
    let on = n / s;
    for j in 0..on {
        let center = (j as f64 + 0.5) * s as f64 - 0.5;
        let base = center.floor() as isize;
        let mut acc = 0.0;
        for i in -1..=2isize {
            let pos = base + i;
            let w = keys(center - pos as f64);
            acc += w * src[ops::reflect_idx(pos, n) * stride];
        }
        out[j * stride] = acc;
    }
}

/// Separable bicubic downsampling by an integer factor; reflect boundary.
/// H and W must be divisible by `s`.
pub fn bicubic_downsample<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.shape().dims();
    if s == 0 {
        return Err(Error::config("scale must be positive"));
    }
    if h % s != 0 || w % s != 0 {
        return Err(Error::dim(format!("size {h}x{w} not divisible by scale {s}")));
    }
    let (oh, ow) = (h / s, w / s);
    let mut out = Tensor::zeros(Shape::new(n, c, oh, ow));
    let mut row_in = vec![0.0f64; w.max(h)];
    let mut row_out = vec![0.0f64; w.max(h)];
    let mut mid = vec![0.0f64; h * ow];
    for ni in 0..n {
        for ci in 0..c {
            // Rows first: (h, w) -> (h, ow).
            for y in 0..h {
                for xi in 0..w {
                    row_in[xi] = x.at(ni, ci, y, xi).to_f64();
                }
                resample_axis(&row_in[..w], w, 1, &mut row_out[..ow], s);
                mid[y * ow..y * ow + ow].copy_from_slice(&row_out[..ow]);
            }
            // Then columns: (h, ow) -> (oh, ow).
            for xi in 0..ow {
                for y in 0..h {
                    row_in[y] = mid[y * ow + xi];
                }
                resample_axis(&row_in[..h], h, 1, &mut row_out[..oh], s);
                for (y, v) in row_out[..oh].iter().enumerate() {
                    let idx = out.shape().idx(ni, ci, y, xi);
                    out.data_mut()[idx] = T::from_f64(*v);
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Procedural dataset
// ---------------------------------------------------------------------------

/// Deterministic procedural images: an oriented gradient for global
/// structure, a checkerboard and a few sinusoids for local texture, each
/// channel normalized to the full 8-bit range.
pub fn synth_dataset(seed: u64, count: usize, size: usize) -> Vec<ImageU8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synth_image(&mut rng, size)).collect()
}

fn synth_image(rng: &mut ChaCha8Rng, size: usize) -> ImageU8 {
    let theta = rng.gen_range(0.0..TAU);
    let (sin_t, cos_t) = theta.sin_cos();
    let grad: [(f64, f64); 3] =
        std::array::from_fn(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));

    let periods = [2usize, 3, 4, 6, 8];
    let period = periods[rng.gen_range(0..periods.len())];
    let phase = (rng.gen_range(0..period), rng.gen_range(0..period));
    let check_amp: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.8));

    let mut waves = Vec::with_capacity(3);
    for _ in 0..3 {
        let fy = rng.gen_range(1.0..6.0);
        let fx = rng.gen_range(1.0..6.0);
        let phi = rng.gen_range(0.0..TAU);
        let amp: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.5));
        waves.push((fy, fx, phi, amp));
    }

    let mut field = vec![[0.0f64; 3]; size * size];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 * cos_t + y as f64 * sin_t) / size as f64;
            let v = (-(x as f64) * sin_t + y as f64 * cos_t) / size as f64;
            let check = (((y + phase.0) / period + (x + phase.1) / period) % 2) as f64 * 2.0 - 1.0;
            let px = &mut field[y * size + x];
            for (c, p) in px.iter_mut().enumerate() {
                *p = grad[c].0 * u + grad[c].1 * v + check_amp[c] * check;
                for (fy, fx, phi, amp) in &waves {
                    *p += amp[c] * (TAU * (fx * x as f64 + fy * y as f64) / size as f64 + phi).sin();
                }
            }
        }
    }

    // Stretch each channel to [0, 255].
    let mut pixels = vec![0u8; 3 * size * size];
    for c in 0..3 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for px in &field {
            lo = lo.min(px[c]);
            hi = hi.max(px[c]);
        }
        let span = hi - lo;
        for (i, px) in field.iter().enumerate() {
            let v = if span < 1e-12 { 128.0 } else { (px[c] - lo) / span * 255.0 };
            pixels[3 * i + c] = v.round() as u8;
        }
    }
    ImageU8::new(size, size, pixels).expect("sized buffer")
}

/// Training corpus with a held-out evaluation split, both deterministic.
pub struct Dataset {
    pub train: Vec<ImageU8>,
    pub eval: Vec<ImageU8>,
}

impl Dataset {
    /// Generate `train_count + eval_count` procedural images from one seed
    /// and split them in order: the first `train_count` train, the rest
    /// evaluate.
    pub fn synthetic(seed: u64, train_count: usize, eval_count: usize, size: usize) -> Dataset {
        let mut all = synth_dataset(seed, train_count + eval_count, size);
        let eval = all.split_off(train_count);
        Dataset { train: all, eval }
    }
}

// ---------------------------------------------------------------------------
// Patch sampling
// ---------------------------------------------------------------------------

/// An HR image and its bicubic LR counterpart as [0, 1] tensors.
pub struct PreparedImage<T: Scalar> {
    pub hr: Tensor<T>,
    pub lr: Tensor<T>,
}

/// Crop images to scale multiples and precompute their LR versions. Images
/// smaller than `patch_hr` are skipped with a warning on stderr.
pub fn prepare_images<T: Scalar>(
    images: &[ImageU8],
    scale: usize,
    patch_hr: usize,
) -> Result<Vec<PreparedImage<T>>> {
    let mut out = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        if img.width() < patch_hr || img.height() < patch_hr {
            eprintln!(
                "warning: skipping image {i} ({}x{}), smaller than the {patch_hr} patch",
                img.width(),
                img.height()
            );
            continue;
        }
        let w = img.width() - img.width() % scale;
        let h = img.height() - img.height() % scale;
        let cropped = img.crop_tl(w, h)?;
        let hr: Tensor<T> = image_to_tensor(&cropped);
        let lr = bicubic_downsample(&hr, scale)?;
        out.push(PreparedImage { hr, lr });
    }
    if out.is_empty() {
        return Err(Error::config("no image is large enough for the patch size"));
    }
    Ok(out)
}

/// One patch as channel-major contiguous values.
struct PatchBuf<T> {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Scalar> PatchBuf<T> {
    fn extract(src: &Tensor<T>, oy: usize, ox: usize, h: usize, w: usize) -> Self {
        let c = src.shape().c();
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(src.at(0, ci, oy + y, ox + x));
                }
            }
        }
        PatchBuf { c, h, w, data }
    }

    fn remap(&self, f: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for ci in 0..self.c {
            let plane = ci * self.h * self.w;
            for y in 0..self.h {
                for x in 0..self.w {
                    let (sy, sx) = f(y, x);
                    data.push(self.data[plane + sy * self.w + sx]);
                }
            }
        }
        PatchBuf { c: self.c, h: self.h, w: self.w, data }
    }

    fn hflip(&self) -> Self {
        self.remap(|y, x| (y, self.w - 1 - x))
    }

    fn vflip(&self) -> Self {
        self.remap(|y, x| (self.h - 1 - y, x))
    }

    /// Quarter turn; patches are square.
    fn rot90(&self) -> Self {
        self.remap(|y, x| (self.h - 1 - x, y))
    }
}

/// Sample an aligned batch of (LR, HR) patch pairs. Augmentation bits are
/// always drawn from the rng so the crop sequence is identical whether or
/// not they are applied.
pub fn sample_patches<T: Scalar>(
    prepared: &[PreparedImage<T>],
    patch_hr: usize,
    scale: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
    augment: bool,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if prepared.is_empty() {
        return Err(Error::config("empty dataset"));
    }
    let patch_lr = patch_hr / scale;
    let mut lr_batch = Tensor::zeros(Shape::new(batch, 3, patch_lr, patch_lr));
    let mut hr_batch = Tensor::zeros(Shape::new(batch, 3, patch_hr, patch_hr));
    for b in 0..batch {
        let img = &prepared[rng.gen_range(0..prepared.len())];
        let (_, _, lh, lw) = img.lr.shape().dims();
        let oy = rng.gen_range(0..=lh - patch_lr);
        let ox = rng.gen_range(0..=lw - patch_lr);
        let hf = rng.gen_range(0..2u32) == 1;
        let vf = rng.gen_range(0..2u32) == 1;
        let rot = rng.gen_range(0..2u32) == 1;

        let mut lp = PatchBuf::extract(&img.lr, oy, ox, patch_lr, patch_lr);
        let mut hp = PatchBuf::extract(&img.hr, oy * scale, ox * scale, patch_hr, patch_hr);
        if augment {
            if hf {
                lp = lp.hflip();
                hp = hp.hflip();
            }
            if vf {
                lp = lp.vflip();
                hp = hp.vflip();
            }
            if rot {
                lp = lp.rot90();
                hp = hp.rot90();
            }
        }
        for (dst, src) in [(&mut lr_batch, &lp), (&mut hr_batch, &hp)] {
            for ci in 0..src.c {
                for y in 0..src.h {
                    for x in 0..src.w {
                        let idx = dst.shape().idx(b, ci, y, x);
                        dst.data_mut()[idx] = src.data[(ci * src.h + y) * src.w + x];
                    }
                }
            }
        }
    }
    Ok((lr_batch, hr_batch))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub psnr: f64,
    pub ssim: f64,
}

/// Degrade one HR image, super-resolve it, and measure luma PSNR/SSIM.
pub fn eval_image<T: Scalar>(
    store: &WeightStore<T>,
    cfg: &ModelConfig,
    hr: &ImageU8,
    crop: usize,
    quantize: bool,
) -> Result<(f64, f64)> {
    let w = hr.width() - hr.width() % cfg.scale;
    let h = hr.height() - hr.height() % cfg.scale;
    let cropped = hr.crop_tl(w, h)?;
    let hr_t: Tensor<T> = image_to_tensor(&cropped);
    let lr_t = bicubic_downsample(&hr_t, cfg.scale)?;
    let sr = model_forward(&lr_t, store, cfg)?;
    let y_sr = tensor_to_y(&sr, 0, quantize)?;
    let y_hr = rgb_to_y(&cropped);
    let p = psnr(&y_sr, &y_hr, crop)?;
    let s = ssim(&y_sr.crop_border(crop)?, &y_hr.crop_border(crop)?)?;
    Ok((p, s))
}

/// Mean PSNR/SSIM of the model over a set of HR images.
pub fn evaluate_model<T: Scalar>(
    store: &WeightStore<T>,
    cfg: &ModelConfig,
    images: &[ImageU8],
    crop: usize,
    quantize: bool,
) -> Result<EvalSummary> {
    if images.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let mut sp = 0.0;
    let mut ss = 0.0;
    for img in images {
        let (p, s) = eval_image(store, cfg, img, crop, quantize)?;
        sp += p;
        ss += s;
    }
    Ok(EvalSummary { psnr: sp / images.len() as f64, ssim: ss / images.len() as f64 })
}

/// The no-learning reference: nearest-neighbor upsampling of the bicubic LR.
pub fn baseline_nearest(images: &[ImageU8], scale: usize, crop: usize) -> Result<EvalSummary> {
    if images.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let mut sp = 0.0;
    let mut ss = 0.0;
    for img in images {
        let w = img.width() - img.width() % scale;
        let h = img.height() - img.height() % scale;
        let cropped = img.crop_tl(w, h)?;
        let hr_t: Tensor<f64> = image_to_tensor(&cropped);
        let lr_t = bicubic_downsample(&hr_t, scale)?;
        let up = ops::nearest_upsample(&lr_t, scale)?;
        let y_up = tensor_to_y(&up, 0, false)?;
        let y_hr = rgb_to_y(&cropped);
        sp += psnr(&y_up, &y_hr, crop)?;
        ss += ssim(&y_up.crop_border(crop)?, &y_hr.crop_border(crop)?)?;
    }
    Ok(EvalSummary { psnr: sp / images.len() as f64, ssim: ss / images.len() as f64 })
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    /// 1-based step the evaluation ran after.
    pub step: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub struct TrainReport<T: Scalar> {
    /// Loss at every step, in order.
    pub losses: Vec<f64>,
    /// Learning rate used at every step.
    pub lrs: Vec<f64>,
    pub evals: Vec<EvalPoint>,
    pub baseline: EvalSummary,
    pub weights: WeightStore<T>,
}

/// Run the full loop: sample, forward, loss, backward, Adam. On a numeric
/// failure the last good weights are written to `abort_checkpoint` (when
/// given) before the error propagates.
pub fn train<T: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    abort_checkpoint: Option<&Path>,
) -> Result<TrainReport<T>> {
    cfg.validate(model_cfg)?;
    let prepared: Vec<PreparedImage<T>> =
        prepare_images(&data.train, model_cfg.scale, cfg.patch_hr)?;
    let mut store: WeightStore<T> = init_weights(model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(&store, cfg.beta1, cfg.beta2, cfg.eps_adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let loss_cfg = LossConfig { gamma: cfg.gamma };
    let crop = model_cfg.scale;

    let baseline = baseline_nearest(&data.eval, model_cfg.scale, crop)?;
    let mut losses = Vec::with_capacity(cfg.total_steps);
    let mut lrs = Vec::with_capacity(cfg.total_steps);
    let mut evals = Vec::new();

    for step in 0..cfg.total_steps {
        let lr = lr_at(step, cfg);
        let (lr_batch, hr_batch) =
            sample_patches(&prepared, cfg.patch_hr, model_cfg.scale, cfg.batch, &mut rng, cfg.augment)?;

        let mut g = Graph::new();
        let bound = bind_weights(&mut g, &store, true);
        let input = g.constant(lr_batch);
        let target = g.constant(hr_batch);
        let loss = (|| {
            let sr = model_graph(&mut g, input, &bound, model_cfg)?;
            sr_loss_graph(&mut g, sr, target, &loss_cfg)
        })();
        let step_result = loss.and_then(|loss| {
            let loss_value = g.value(loss).data()[0].to_f64();
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became non-finite at step {}",
                    step + 1
                )));
            }
            let mut grads = g.backward(loss, None)?;
            let mut grad_map = IndexMap::with_capacity(store.len());
            for (path, var) in bound.iter() {
                let grad = grads.take(var).unwrap_or_else(|| {
                    Tensor::zeros(g.value(var).shape())
                });
                grad_map.insert(path.clone(), grad);
            }
            adam_step(&mut store, &grad_map, &mut adam, lr)?;
            Ok(loss_value)
        });
        let loss_value = match step_result {
            Ok(v) => v,
            Err(e) => {
                if let Some(path) = abort_checkpoint {
                    save_weights(path, model_cfg, &store)?;
                }
                return Err(e);
            }
        };
        losses.push(loss_value);
        lrs.push(lr);

        let last = step + 1 == cfg.total_steps;
        if last || (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0) {
            let summary = evaluate_model(&store, model_cfg, &data.eval, crop, false)?;
            evals.push(EvalPoint { step: step + 1, psnr: summary.psnr, ssim: summary.ssim });
        }
    }

    Ok(TrainReport { losses, lrs, evals, baseline, weights: store })
}

/// Serialize a report as CSV: one row per step; metric cells are filled on
/// the steps where evaluation ran and empty otherwise.
pub fn report_to_csv<T: Scalar>(report: &TrainReport<T>) -> String {
    let mut out = String::from("step,lr,loss,psnr,ssim\n");
    let mut evals = report.evals.iter().peekable();
    for (i, (loss, lr)) in report.losses.iter().zip(&report.lrs).enumerate() {
        let step = i + 1;
        let (p, s) = match evals.peek() {
            Some(e) if e.step == step => {
                let e = evals.next().expect("peeked");
                (format_metric(e.psnr), format_metric(e.ssim))
            }
            _ => (String::new(), String::new()),
        };
        out.push_str(&format!("{step},{lr:.9},{loss:.6},{p},{s}\n"));
    }
    out
}

fn format_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_owned()
    } else {
        format!("{v:.6}")
    }
}
