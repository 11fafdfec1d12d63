//! Closed-form parameter and FLOP accounting: the full model, the effect
//! of each ablation flag, and a per-layer breakdown.

use glsr::complexity::{count_flops, count_params, FlopConvention};
use glsr::nn::ModelConfig;

fn main() -> glsr::Result<()> {
    let hr = (720, 1280);
    let full = ModelConfig::new(16, 2, 2);

    println!("variant    params        macs @ {}x{}", hr.1, hr.0);
    let variants: [(&str, fn(&mut ModelConfig)); 4] = [
        ("full", |_| {}),
        ("-scam", |c| c.enable_scam = false),
        ("-cfc", |c| c.enable_cfc = false),
        ("-glie", |c| c.enable_glie = false),
    ];
    for (name, tweak) in variants {
        let mut cfg = full;
        tweak(&mut cfg);
        let report = count_flops(&cfg, hr, FlopConvention::TwoPerMac)?;
        println!("{name:<8} {:>8}  {:>14}", report.params, report.macs);
    }

    println!("\nper-layer breakdown, C=16 N=2 s=2:");
    let report = count_flops(&full, hr, FlopConvention::TwoPerMac)?;
    println!("{:<22} {:>8} {:>14}", "layer", "params", "macs");
    for layer in &report.breakdown {
        println!("{:<22} {:>8} {:>14}", layer.path, layer.params, layer.macs);
    }
    println!("{:<22} {:>8} {:>14}", "total", report.params, report.macs);

    // The closed-form count must agree with the weights actually created.
    let store: glsr::nn::WeightStore<f32> = glsr::nn::init_weights(&full, 0)?;
    assert_eq!(count_params(&full)?, store.num_scalars() as u64);
    println!("\ncount matches initialized scalars: {}", store.num_scalars());
    Ok(())
}
