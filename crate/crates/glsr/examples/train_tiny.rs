//! Train a small model on procedural images and watch the loss fall.
//!
//! Finishes in about fifteen seconds on one core. The run is deterministic:
//! the printed numbers come out identical every time.

use glsr::nn::ModelConfig;
use glsr::trainer::{train, Dataset, TrainConfig, TrainReport};

fn main() -> glsr::Result<()> {
    let model = ModelConfig::new(8, 1, 2);
    let mut cfg = TrainConfig::for_scale(model.scale);
    cfg.total_steps = 600;
    cfg.batch = 4;
    cfg.patch_hr = 64;
    cfg.eval_interval = 150;
    cfg.seed = 7;

    let data = Dataset::synthetic(cfg.seed, 12, 4, 64);
    println!(
        "training C={} N={} s={} on {} images, {} steps",
        model.channels,
        model.num_blocks,
        model.scale,
        data.train.len(),
        cfg.total_steps
    );

    let report: TrainReport<f32> = train(&model, &cfg, &data, None)?;

    println!("\n  step      lr      loss");
    for step in (0..cfg.total_steps).step_by(60) {
        println!("{:>6}  {:.2e}  {:.5}", step + 1, report.lrs[step], report.losses[step]);
    }

    println!("\n  step   psnr (dB)     ssim");
    for point in &report.evals {
        println!("{:>6}  {:>9.3}  {:.5}", point.step, point.psnr, point.ssim);
    }
    println!(
        "\nnearest-neighbor baseline: psnr {:.3} dB, ssim {:.5}",
        report.baseline.psnr, report.baseline.ssim
    );
    Ok(())
}
