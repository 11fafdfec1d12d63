//! End-to-end acceptance checks, one line of output per criterion.
//!
//! This target runs without the default test harness: the checks execute
//! sequentially in a fixed order, each prints PASS or FAIL with a short
//! measurement summary, and the process exits nonzero if any failed.
//! Sequential execution matters because two criteria assert wall-clock
//! budgets and must not share the machine with sibling tests.

mod common;

use std::fmt::Write as _;
use std::io::Write as _;
use std::time::Instant;

use glsr::cli::gradcheck_suite;
use glsr::complexity::{count_flops, count_params, FlopConvention};
use glsr::io::{decode_checkpoint, encode_checkpoint, read_ppm, write_ppm, ImageU8};
use glsr::nn::{init_weights, ModelConfig, WeightStore};
use glsr::signal::{fft2d, ifft2d};
use glsr::tensor::ops::{channel_split, concat_channels, pixel_shuffle, pixel_unshuffle};
use glsr::tensor::{Shape, Tensor};
use glsr::trainer::{lr_at, train, Dataset, Schedule, TrainConfig, TrainReport};

fn main() {
    let criteria: [(&str, fn() -> Result<String, String>); 8] = [
        ("gradient fidelity", criterion_1),
        ("oracle equivalence", criterion_2),
        ("exact inverses", criterion_3),
        ("desk-scale training", criterion_4),
        ("ablation behavior", criterion_5),
        ("complexity counter", criterion_6),
        ("schedule endpoints", criterion_7),
        ("i/o round trips", criterion_8),
    ];
    let mut failures = 0usize;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run);
        let (ok, detail) = match outcome {
            Ok(Ok(d)) => (true, d),
            Ok(Err(d)) => (false, d),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .map(|s| s.as_str())
                    .or_else(|| p.downcast_ref::<&str>().copied())
                    .unwrap_or("panic");
                (false, format!("panicked: {msg}"))
            }
        };
        println!(
            "{} criterion {}: {name} ({detail})",
            if ok { "PASS" } else { "FAIL" },
            i + 1
        );
        let _ = std::io::stdout().flush();
        if !ok {
            failures += 1;
        }
    }
    if failures > 0 {
        eprintln!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity
// ---------------------------------------------------------------------------

fn criterion_1() -> Result<String, String> {
    let started = Instant::now();
    let outcomes = gradcheck_suite("all").map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    if outcomes.len() != 8 {
        return Err(format!("expected 8 checks, ran {}", outcomes.len()));
    }
    let mut worst = 0.0f64;
    for o in &outcomes {
        if o.max_rel_err >= o.tolerance {
            return Err(format!("{}: rel err {} >= {}", o.name, o.max_rel_err, o.tolerance));
        }
        worst = worst.max(o.max_rel_err / o.tolerance);
    }
    if secs >= 60.0 {
        return Err(format!("took {secs:.1} s, budget 60 s"));
    }
    Ok(format!("8 checks, worst at {:.1}% of tolerance, {secs:.2} s", worst * 100.0))
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalence
// ---------------------------------------------------------------------------

fn criterion_2() -> Result<String, String> {
    let (conv64, conv32) = common::check_conv_oracle()?;
    let (dpsnr, dssim) = common::check_metric_oracles()?;
    let freq = common::check_freq_oracle()?;
    Ok(format!(
        "conv rel {conv64:.1e}/{conv32:.1e}, psnr/ssim abs {dpsnr:.1e}/{dssim:.1e}, freq rel {freq:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 3. Exact inverses
// ---------------------------------------------------------------------------

fn bits_equal(a: &Tensor<f64>, b: &Tensor<f64>) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn criterion_3() -> Result<String, String> {
    // Pixel shuffle round trips in both directions.
    for r in [2usize, 3] {
        let x = common::rand_tensor(Shape::new(2, 3, 6 * r, 6 * r), 1.0, 30 + r as u64);
        let back = pixel_shuffle(&pixel_unshuffle(&x, r).map_err(|e| e.to_string())?, r)
            .map_err(|e| e.to_string())?;
        if !bits_equal(&x, &back) {
            return Err(format!("unshuffle/shuffle r={r} not bitwise"));
        }
        let y = common::rand_tensor(Shape::new(1, 3 * r * r, 5, 7), 1.0, 40 + r as u64);
        let back = pixel_unshuffle(&pixel_shuffle(&y, r).map_err(|e| e.to_string())?, r)
            .map_err(|e| e.to_string())?;
        if !bits_equal(&y, &back) {
            return Err(format!("shuffle/unshuffle r={r} not bitwise"));
        }
    }

    // Channel split/concat round trips.
    for parts in [2usize, 3, 4] {
        let x = common::rand_tensor(Shape::new(2, 12, 5, 7), 1.0, 50 + parts as u64);
        let pieces = channel_split(&x, parts).map_err(|e| e.to_string())?;
        let refs: Vec<&Tensor<f64>> = pieces.iter().collect();
        let back = concat_channels(&refs).map_err(|e| e.to_string())?;
        if !bits_equal(&x, &back) {
            return Err(format!("split/concat parts={parts} not bitwise"));
        }
    }

    // Inverse transform and Parseval, power-of-two and mixed extents.
    let mut worst_inv = 0.0f64;
    let mut worst_par = 0.0f64;
    for (h, w, seed) in [(8usize, 8usize, 60u64), (12, 20, 61), (32, 32, 62)] {
        let x = common::rand_tensor(Shape::new(1, 1, h, w), 1.0, seed);
        let spectrum = fft2d(x.data(), h, w);
        let back = ifft2d(&spectrum);
        worst_inv = worst_inv.max(common::rel_err(&back, x.data()));

        let space: f64 = x.data().iter().map(|v| v * v).sum();
        let freq: f64 = spectrum
            .re
            .iter()
            .zip(&spectrum.im)
            .map(|(re, im)| re * re + im * im)
            .sum::<f64>()
            / (h * w) as f64;
        worst_par = worst_par.max((space - freq).abs() / space.abs());
    }
    if worst_inv > 1e-10 {
        return Err(format!("ifft(fft) rel err {worst_inv:.1e}"));
    }
    if worst_par > 1e-10 {
        return Err(format!("parseval rel err {worst_par:.1e}"));
    }
    Ok(format!(
        "shuffle/split bitwise, ifft rel {worst_inv:.1e}, parseval rel {worst_par:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 4. Desk-scale training run
// ---------------------------------------------------------------------------

fn desk_train_config() -> TrainConfig {
    let mut cfg = TrainConfig::for_scale(2);
    cfg.total_steps = 1500;
    cfg.batch = 8;
    cfg.patch_hr = 64;
    cfg.lr_start = 1e-3;
    cfg.lr_end = 1e-5;
    cfg.schedule = Schedule::Cosine;
    cfg.gamma = 0.05;
    cfg.seed = 0;
    cfg.eval_interval = 0;
    cfg
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn loss_ratio(losses: &[f64]) -> (f64, f64, f64) {
    let first = mean(&losses[..100]);
    let last = mean(&losses[losses.len() - 100..]);
    (first, last, last / first)
}

fn criterion_4() -> Result<String, String> {
    let model = ModelConfig::new(16, 2, 2);
    let tcfg = desk_train_config();
    let data = Dataset::synthetic(0, 64, 16, 64);

    let started = Instant::now();
    let report: TrainReport<f32> =
        train(&model, &tcfg, &data, None).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();

    let (first, last, ratio) = loss_ratio(&report.losses);
    if ratio >= 0.5 {
        return Err(format!("loss {first:.4} -> {last:.4}, ratio {ratio:.3} >= 0.5"));
    }
    let eval = report.evals.last().ok_or("no evaluation recorded")?;
    let margin = eval.psnr - report.baseline.psnr;
    if margin < 0.5 {
        return Err(format!(
            "psnr {:.3} vs baseline {:.3}: margin {margin:.3} dB < 0.5",
            eval.psnr, report.baseline.psnr
        ));
    }
    if secs >= 900.0 {
        return Err(format!("took {secs:.0} s, budget 900 s"));
    }

    // Same seed, fresh dataset object: every byte must come out identical.
    let data2 = Dataset::synthetic(0, 64, 16, 64);
    let report2: TrainReport<f32> =
        train(&model, &tcfg, &data2, None).map_err(|e| e.to_string())?;
    let ck1 = encode_checkpoint(&model, &report.weights).map_err(|e| e.to_string())?;
    let ck2 = encode_checkpoint(&model, &report2.weights).map_err(|e| e.to_string())?;
    if ck1 != ck2 {
        return Err("rerun checkpoint differs".into());
    }
    if report
        .losses
        .iter()
        .zip(&report2.losses)
        .any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err("rerun loss curve differs".into());
    }

    Ok(format!(
        "loss ratio {ratio:.3}, psnr +{margin:.2} dB over baseline, {secs:.0} s, rerun bitwise identical"
    ))
}

// ---------------------------------------------------------------------------
// 5. Ablation behavior
// ---------------------------------------------------------------------------

fn criterion_5() -> Result<String, String> {
    let full = ModelConfig::new(16, 2, 2);
    let full_params = count_params(&full).map_err(|e| e.to_string())?;
    let tcfg = desk_train_config();
    let data = Dataset::synthetic(0, 64, 16, 64);

    let mut detail = String::new();
    for (name, ablate) in [
        ("no-scam", (|c: &mut ModelConfig| c.enable_scam = false) as fn(&mut ModelConfig)),
        ("no-cfc", |c| c.enable_cfc = false),
        ("no-glie", |c| c.enable_glie = false),
    ] {
        let mut cfg = full;
        ablate(&mut cfg);
        let params = count_params(&cfg).map_err(|e| e.to_string())?;
        if params >= full_params {
            return Err(format!("{name}: {params} params, not below {full_params}"));
        }
        let report: TrainReport<f32> =
            train(&cfg, &tcfg, &data, None).map_err(|e| format!("{name}: {e}"))?;
        let (first, last, ratio) = loss_ratio(&report.losses);
        if ratio >= 0.5 {
            return Err(format!(
                "{name}: loss {first:.4} -> {last:.4}, ratio {ratio:.3} >= 0.5"
            ));
        }
        let _ = write!(detail, "{name} {params}p ratio {ratio:.3}, ");
    }
    detail.push_str(&format!("full {full_params}p"));
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 6. Complexity counter
// ---------------------------------------------------------------------------

fn criterion_6() -> Result<String, String> {
    // Closed-form count vs actual initialized scalars, across shapes and
    // every ablation.
    let mut configs = vec![
        ModelConfig::new(16, 2, 2),
        ModelConfig::new(8, 1, 2),
        ModelConfig::new(8, 3, 3),
        ModelConfig::new(12, 2, 4),
    ];
    for flag in 0..3 {
        let mut c = ModelConfig::new(16, 2, 2);
        match flag {
            0 => c.enable_scam = false,
            1 => c.enable_cfc = false,
            _ => c.enable_glie = false,
        }
        configs.push(c);
    }
    for cfg in &configs {
        let counted = count_params(cfg).map_err(|e| e.to_string())?;
        let store: WeightStore<f32> = init_weights(cfg, 1).map_err(|e| e.to_string())?;
        if counted != store.num_scalars() as u64 {
            return Err(format!(
                "C={} N={} s={}: counted {counted}, stored {}",
                cfg.channels,
                cfg.num_blocks,
                cfg.scale,
                store.num_scalars()
            ));
        }
    }

    // Hand-enumerated spreadsheet for C=8, N=1, s=2.
    let tiny = ModelConfig::new(8, 1, 2);
    let expected: &[(&str, u64)] = &[
        ("head", 3 * 8 * 9 + 8),
        ("block.0.scam.ln", 16),
        ("block.0.scam.squeeze", 8 * 8 + 8),
        ("block.0.scam.gate1", 0),
        ("block.0.scam.dw.0", 2 * 9 + 2),
        ("block.0.scam.dw.1", 2 * 9 + 2),
        ("block.0.scam.dw.2", 2 * 9 + 2),
        ("block.0.scam.dw.3", 2 * 9 + 2),
        ("block.0.scam.fuse", 8 * 8 + 8),
        ("block.0.scam.gate2", 0),
        ("block.0.residual1", 0),
        ("block.0.cfc.ln", 16),
        ("block.0.cfc.expand", 16 * 8 * 9 + 16),
        ("block.0.cfc.gate", 0),
        ("block.0.cfc.fuse", 8 * 8 + 8),
        ("block.0.residual2", 0),
        ("glie.fuse", 32 * 32 + 32),
        ("tail", 12 * 16 * 9 + 12),
    ];
    let report = count_flops(&tiny, (64, 64), FlopConvention::TwoPerMac).map_err(|e| e.to_string())?;
    if report.breakdown.len() != expected.len() {
        return Err(format!(
            "breakdown rows {} != spreadsheet rows {}",
            report.breakdown.len(),
            expected.len()
        ));
    }
    for (row, (path, params)) in report.breakdown.iter().zip(expected) {
        if row.path != *path || row.params != *params {
            return Err(format!(
                "spreadsheet row {path} {params} vs counted {} {}",
                row.path, row.params
            ));
        }
    }
    let sheet_total: u64 = expected.iter().map(|(_, p)| p).sum();
    if report.params != sheet_total {
        return Err(format!("total {} != spreadsheet {sheet_total}", report.params));
    }

    // FLOPs scale exactly linearly in H.
    let lo = count_flops(&tiny, (64, 48), FlopConvention::TwoPerMac).map_err(|e| e.to_string())?;
    let hi = count_flops(&tiny, (128, 48), FlopConvention::TwoPerMac).map_err(|e| e.to_string())?;
    if hi.macs != 2 * lo.macs || hi.flops != 2 * lo.flops {
        return Err(format!("H doubling: {} -> {}", lo.macs, hi.macs));
    }

    Ok(format!(
        "{} configs integer-exact, spreadsheet {} params, H doubling exact",
        configs.len(),
        sheet_total
    ))
}

// ---------------------------------------------------------------------------
// 7. Schedule endpoints
// ---------------------------------------------------------------------------

fn criterion_7() -> Result<String, String> {
    for schedule in [Schedule::Cosine, Schedule::StepDecay] {
        let mut cfg = desk_train_config();
        cfg.schedule = schedule;
        let t = cfg.total_steps;
        if lr_at(0, &cfg) != 1e-3 {
            return Err(format!("{schedule:?}: lr_at(0) = {}", lr_at(0, &cfg)));
        }
        if lr_at(t, &cfg) != 1e-5 {
            return Err(format!("{schedule:?}: lr_at(T) = {}", lr_at(t, &cfg)));
        }
        if lr_at(t + 100, &cfg) != 1e-5 {
            return Err(format!("{schedule:?}: lr beyond T = {}", lr_at(t + 100, &cfg)));
        }
    }
    Ok("lr_at(0) = 1e-3 and lr_at(T) = 1e-5 exactly, both schedules".into())
}

// ---------------------------------------------------------------------------
// 8. I/O round trips
// ---------------------------------------------------------------------------

fn criterion_8() -> Result<String, String> {
    use rand::{Rng, SeedableRng};

    // PPM: image -> bytes -> image and bytes -> image -> bytes.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(80);
    let (w, h) = (13usize, 7usize);
    let pixels: Vec<u8> = (0..3 * w * h).map(|_| rng.gen()).collect();
    let img = ImageU8::new(w, h, pixels).map_err(|e| e.to_string())?;
    let bytes = write_ppm(&img);
    let back = read_ppm(&bytes).map_err(|e| e.to_string())?;
    if back.pixels() != img.pixels() || back.width() != w || back.height() != h {
        return Err("ppm image round trip not bitwise".into());
    }
    if write_ppm(&back) != bytes {
        return Err("ppm byte round trip not bitwise".into());
    }

    // Checkpoint: store -> bytes -> store -> bytes.
    let mut cfg = ModelConfig::new(8, 2, 3);
    cfg.enable_glie = false;
    let store: WeightStore<f32> = init_weights(&cfg, 81).map_err(|e| e.to_string())?;
    let ck = encode_checkpoint(&cfg, &store).map_err(|e| e.to_string())?;
    let (cfg2, store2) = decode_checkpoint(&ck).map_err(|e| e.to_string())?;
    if cfg2 != cfg {
        return Err("checkpoint config round trip differs".into());
    }
    for ((pa, ta), (pb, tb)) in store.iter().zip(store2.iter()) {
        if pa != pb
            || ta.data()
                .iter()
                .zip(tb.data())
                .any(|(x, y)| x.to_bits() != y.to_bits())
        {
            return Err(format!("checkpoint tensor {pa} round trip differs"));
        }
    }
    if encode_checkpoint(&cfg2, &store2).map_err(|e| e.to_string())? != ck {
        return Err("checkpoint byte round trip differs".into());
    }

    // Self-evaluation through the real binary: every line must report the
    // PSNR sentinel and an SSIM of exactly 1.000000.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let hr_dir = dir.path().join("hr");
    std::fs::create_dir(&hr_dir).map_err(|e| e.to_string())?;
    for (i, img) in glsr::trainer::synth_dataset(82, 3, 40).iter().enumerate() {
        glsr::io::save_ppm(hr_dir.join(format!("img{i}.ppm")), img).map_err(|e| e.to_string())?;
    }
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_glsr"))
        .args(["eval", "--sr-dir"])
        .arg(&hr_dir)
        .arg("--hr-dir")
        .arg(&hr_dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("eval exited with {:?}", out.status.code()));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let mut rows = 0;
    for line in stdout.lines().skip(1) {
        if !line.ends_with(",inf,1.000000") {
            return Err(format!("eval line {line:?} not inf/1.000000"));
        }
        rows += 1;
    }
    if rows != 4 {
        return Err(format!("expected 3 image rows plus mean, got {rows}"));
    }

    Ok("ppm and checkpoint bitwise, self-eval inf/1.000000 on 3 images".into())
}
