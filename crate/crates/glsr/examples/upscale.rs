//! The full restoration loop: degrade an image with bicubic downsampling,
//! super-resolve it with a quickly trained model, and compare the result
//! against nearest-neighbor upsampling.
//!
//! Writes the original, the low-resolution input, and both reconstructions
//! as PPM files into a temporary directory.

use glsr::io::{image_to_tensor, save_ppm, tensor_to_image};
use glsr::metrics::{psnr, rgb_to_y};
use glsr::nn::model::model_forward;
use glsr::nn::ModelConfig;
use glsr::tensor::ops::nearest_upsample;
use glsr::trainer::{bicubic_downsample, train, Dataset, TrainConfig, TrainReport};

fn main() -> glsr::Result<()> {
    let model = ModelConfig::new(8, 1, 2);
    let mut cfg = TrainConfig::for_scale(model.scale);
    cfg.total_steps = 600;
    cfg.batch = 4;
    cfg.patch_hr = 64;
    cfg.eval_interval = 0;
    cfg.seed = 8;

    // Hold one image out of training entirely; that is the one we restore.
    let data = Dataset::synthetic(cfg.seed, 12, 1, 64);
    let target = data.eval[0].clone();

    println!("training {} steps...", cfg.total_steps);
    let report: TrainReport<f32> = train(&model, &cfg, &data, None)?;

    let hr = image_to_tensor::<f32>(&target);
    let lr = bicubic_downsample(&hr, model.scale)?;
    let restored = model_forward(&lr, &report.weights, &model)?;
    let nearest = nearest_upsample(&lr, model.scale)?;

    let dir = std::env::temp_dir().join("glsr_upscale");
    std::fs::create_dir_all(&dir)?;
    let emit = |name: &str, t| -> glsr::Result<()> {
        save_ppm(dir.join(name), &tensor_to_image(t, 0)?)
    };
    save_ppm(dir.join("original.ppm"), &target)?;
    emit("input_lr.ppm", &lr)?;
    emit("nearest.ppm", &nearest)?;
    emit("restored.ppm", &restored)?;

    let y_hr = rgb_to_y(&target);
    let quality = |t| -> glsr::Result<f64> {
        psnr(&rgb_to_y(&tensor_to_image(t, 0)?), &y_hr, model.scale as usize)
    };
    println!("nearest-neighbor psnr: {:.3} dB", quality(&nearest)?);
    println!("model psnr:            {:.3} dB", quality(&restored)?);
    println!("images written to {}", dir.display());
    Ok(())
}
