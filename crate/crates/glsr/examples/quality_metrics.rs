//! PSNR and SSIM over a ladder of degradations, on the luma plane the way
//! super-resolution results are conventionally reported.

use glsr::metrics::{psnr, rgb_to_y, ssim};
use glsr::io::ImageU8;
use glsr::trainer::synth_dataset;
use rand::{Rng, SeedableRng};

fn degrade(img: &ImageU8, amplitude: f64, seed: u64) -> ImageU8 {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| (p as f64 + rng.gen_range(-amplitude..=amplitude)).clamp(0.0, 255.0) as u8)
        .collect();
    ImageU8::new(img.width(), img.height(), pixels).unwrap()
}

fn shift(img: &ImageU8, delta: i16) -> ImageU8 {
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| (p as i16 + delta).clamp(0, 255) as u8)
        .collect();
    ImageU8::new(img.width(), img.height(), pixels).unwrap()
}

fn main() -> glsr::Result<()> {
    let img = synth_dataset(21, 1, 64).remove(0);
    let reference = rgb_to_y(&img);

    println!("degradation       psnr (dB)    ssim");
    let row = |name: &str, other: &ImageU8| -> glsr::Result<()> {
        let y = rgb_to_y(other);
        let p = psnr(&y, &reference, 0)?;
        let s = ssim(&y, &reference)?;
        let p = if p.is_infinite() { "inf".to_owned() } else { format!("{p:.3}") };
        println!("{name:<16} {p:>10}  {s:.5}");
        Ok(())
    };

    row("identical", &img)?;
    row("noise +-4", &degrade(&img, 4.0, 1))?;
    row("noise +-16", &degrade(&img, 16.0, 2))?;
    row("noise +-48", &degrade(&img, 48.0, 3))?;
    row("brightness +10", &shift(&img, 10))?;
    row("brightness +40", &shift(&img, 40))?;

    println!("\npsnr tracks pixel error; ssim tracks structure, so a flat");
    println!("brightness shift costs psnr heavily but ssim only mildly.");
    Ok(())
}
