//! Command-line surface: train, infer, eval, count, gradcheck.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command
//! is deterministic; identical invocations write identical files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;

use crate::complexity::{count_flops, count_params, FlopConvention};
use crate::error::{Error, Result};
use crate::io::{
    image_to_tensor, load_ppm, load_weights, save_ppm, save_weights, tensor_to_image, ImageU8,
};
use crate::metrics::{psnr, rgb_to_y, ssim};
use crate::nn::model::{
    cfc_graph, glie_graph, model_forward, model_graph, scam_graph, BoundWeights,
};
use crate::nn::{init_weights, ModelConfig, WeightStore};
use crate::signal::{sr_loss_graph, LossConfig};
use crate::tensor::gradcheck::grad_check;
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Scalar, Shape, Tensor};
use crate::trainer::{
    eval_image, report_to_csv, train, Dataset, Schedule, TrainConfig, TrainReport,
};

#[derive(Parser)]
#[command(name = "glsr", version, about = "Global-local single-image super-resolution")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Super-resolve one PPM image with a trained checkpoint.
    Infer(InferArgs),
    /// Measure PSNR/SSIM over a directory of HR images.
    Eval(EvalArgs),
    /// Report parameter and FLOP counts for a configuration.
    Count(CountArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value configuration file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// "synthetic" or a directory of .ppm training images.
    #[arg(long, default_value = "synthetic")]
    data: String,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV training report (step, lr, loss, psnr, ssim).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Input PPM; the upscaling factor comes from the checkpoint.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to super-resolve with (omit when using --sr-dir).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Ground-truth HR images (.ppm).
    #[arg(long)]
    hr_dir: PathBuf,
    /// Pre-computed SR images to compare directly instead of running a
    /// model; files are matched to --hr-dir by name.
    #[arg(long)]
    sr_dir: Option<PathBuf>,
    /// Border pixels to ignore; defaults to the checkpoint scale, or 0 with
    /// --sr-dir.
    #[arg(long)]
    crop: Option<usize>,
    /// Quantize the SR output to 8-bit levels before measuring.
    #[arg(long)]
    quantize: bool,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 2)]
    scale: usize,
    #[arg(long)]
    no_scam: bool,
    #[arg(long)]
    no_cfc: bool,
    #[arg(long)]
    no_glie: bool,
    /// HR output size as WIDTHxHEIGHT.
    #[arg(long, default_value = "1280x720")]
    hr: String,
    /// FLOPs printed per MAC: 2 (default) or 1.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    flops_per_mac: u8,
    /// Also write the per-layer breakdown as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// all, conv, layer_norm, mul, scam, cfc, glie, model, or loss.
    #[arg(long, default_value = "all")]
    module: String,
}

/// Entry point behind `main`; returns the process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Count(a) => cmd_count(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration files
// ---------------------------------------------------------------------------

/// Everything a training run needs, assembled from defaults plus a config
/// file.
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
    train_images: usize,
    eval_images: usize,
    image_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::new(16, 2, 2);
        RunConfig {
            model,
            train: TrainConfig::for_scale(model.scale),
            train_images: 64,
            eval_images: 16,
            image_size: 64,
        }
    }
}

fn parse_config(text: &str) -> Result<RunConfig> {
    let mut seen: IndexMap<String, String> = IndexMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        let key = key.trim().to_owned();
        if seen.insert(key.clone(), value.trim().to_owned()).is_some() {
            return Err(Error::config(format!("duplicate config key {key}")));
        }
    }

    let mut cfg = RunConfig::default();
    let mut patch_set = false;
    for (key, value) in &seen {
        let parse_usize = || -> Result<usize> {
            value.parse().map_err(|_| Error::config(format!("{key} must be an integer, got {value:?}")))
        };
        let parse_f64 = || -> Result<f64> {
            value.parse().map_err(|_| Error::config(format!("{key} must be a number, got {value:?}")))
        };
        let parse_bool = || -> Result<bool> {
            match value.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::config(format!("{key} must be true or false, got {value:?}"))),
            }
        };
        match key.as_str() {
            "channels" => cfg.model.channels = parse_usize()?,
            "blocks" => cfg.model.num_blocks = parse_usize()?,
            "scale" => cfg.model.scale = parse_usize()?,
            "scam" => cfg.model.enable_scam = parse_bool()?,
            "cfc" => cfg.model.enable_cfc = parse_bool()?,
            "glie" => cfg.model.enable_glie = parse_bool()?,
            "total_steps" => cfg.train.total_steps = parse_usize()?,
            "batch" => cfg.train.batch = parse_usize()?,
            "patch_hr" => {
                cfg.train.patch_hr = parse_usize()?;
                patch_set = true;
            }
            "lr_start" => cfg.train.lr_start = parse_f64()?,
            "lr_end" => cfg.train.lr_end = parse_f64()?,
            "schedule" => {
                cfg.train.schedule = match value.as_str() {
                    "cosine" => Schedule::Cosine,
                    "step" => Schedule::StepDecay,
                    _ => {
                        return Err(Error::config(format!(
                            "schedule must be cosine or step, got {value:?}"
                        )))
                    }
                }
            }
            "beta1" => cfg.train.beta1 = parse_f64()?,
            "beta2" => cfg.train.beta2 = parse_f64()?,
            "eps_adam" => cfg.train.eps_adam = parse_f64()?,
            "gamma" => cfg.train.gamma = parse_f64()?,
            "seed" => cfg.train.seed = parse_usize()? as u64,
            "eval_interval" => cfg.train.eval_interval = parse_usize()?,
            "augment" => cfg.train.augment = parse_bool()?,
            "train_images" => cfg.train_images = parse_usize()?,
            "eval_images" => cfg.eval_images = parse_usize()?,
            "image_size" => cfg.image_size = parse_usize()?,
            _ => return Err(Error::config(format!("unknown config key {key}"))),
        }
    }
    if !patch_set {
        cfg.train.patch_hr = 32 * cfg.model.scale;
    }
    cfg.train.validate(&cfg.model)?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn list_ppm(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
            files.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    if files.is_empty() {
        return Err(Error::config(format!("no .ppm files in {}", dir.display())));
    }
    Ok(files)
}

fn load_dataset(spec: &str, cfg: &RunConfig) -> Result<Dataset> {
    if spec == "synthetic" {
        return Ok(Dataset::synthetic(
            cfg.train.seed,
            cfg.train_images,
            cfg.eval_images,
            cfg.image_size,
        ));
    }
    let files = list_ppm(Path::new(spec))?;
    let mut images = Vec::with_capacity(files.len());
    for (_, path) in &files {
        images.push(load_ppm(path)?);
    }
    // Hold out the last fifth (at least one image) for evaluation.
    let eval_count = (images.len() / 5).max(1);
    if eval_count >= images.len() {
        return Err(Error::config("need at least two images to split off an evaluation set"));
    }
    let eval = images.split_off(images.len() - eval_count);
    Ok(Dataset { train: images, eval })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let cfg = match &args.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    let data = load_dataset(&args.data, &cfg)?;
    println!(
        "training C={} N={} s={} for {} steps on {} images ({} held out)",
        cfg.model.channels,
        cfg.model.num_blocks,
        cfg.model.scale,
        cfg.train.total_steps,
        data.train.len(),
        data.eval.len()
    );
    let started = std::time::Instant::now();
    let report: TrainReport<f32> = train(&cfg.model, &cfg.train, &data, Some(&args.out))?;
    let secs = started.elapsed().as_secs_f64();

    save_weights(&args.out, &cfg.model, &report.weights)?;
    if let Some(csv) = &args.report {
        std::fs::write(csv, report_to_csv(&report))?;
    }

    let window = 100.min(report.losses.len());
    let first = mean(&report.losses[..window]);
    let last = mean(&report.losses[report.losses.len() - window..]);
    println!("finished in {secs:.1}s");
    println!(
        "loss: first-{window} mean {first:.6}, last-{window} mean {last:.6} (ratio {:.3})",
        last / first
    );
    if let Some(eval) = report.evals.last() {
        println!(
            "eval: psnr {:.3} dB (nearest-neighbor baseline {:.3} dB), ssim {:.6}",
            eval.psnr, report.baseline.psnr, eval.ssim
        );
    }
    println!("checkpoint: {}", args.out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn cmd_infer(args: InferArgs) -> Result<i32> {
    let (cfg, store) = load_weights(&args.ckpt)?;
    let img = load_ppm(&args.input)?;
    let lr: Tensor<f32> = image_to_tensor(&img);
    let sr = model_forward(&lr, &store, &cfg)?;
    let out = tensor_to_image(&sr, 0)?;
    save_ppm(&args.out, &out)?;
    println!(
        "{}x{} -> {}x{} (x{}) written to {}",
        img.width(),
        img.height(),
        out.width(),
        out.height(),
        cfg.scale,
        args.out.display()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_owned()
    } else {
        format!("{v:.6}")
    }
}

fn eval_direct(hr: &ImageU8, sr: &ImageU8, crop: usize) -> Result<(f64, f64)> {
    let ya = rgb_to_y(sr);
    let yb = rgb_to_y(hr);
    let p = psnr(&ya, &yb, crop)?;
    let s = ssim(&ya.crop_border(crop)?, &yb.crop_border(crop)?)?;
    Ok((p, s))
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    // Validate the argument combination before touching the filesystem.
    let model = match (&args.ckpt, &args.sr_dir) {
        (Some(_), Some(_)) => {
            return Err(Error::Usage("pass either --ckpt or --sr-dir, not both".into()))
        }
        (None, None) => return Err(Error::Usage("one of --ckpt or --sr-dir is required".into())),
        (Some(ckpt), None) => Some(load_weights(ckpt)?),
        (None, Some(_)) => None,
    };
    let files = list_ppm(&args.hr_dir)?;
    let crop = args.crop.unwrap_or_else(|| model.as_ref().map_or(0, |(cfg, _)| cfg.scale));

    println!("image,psnr,ssim");
    let mut psnrs = Vec::with_capacity(files.len());
    let mut ssims = Vec::with_capacity(files.len());
    for (name, path) in &files {
        let hr = load_ppm(path)?;
        let (p, s) = match (&model, &args.sr_dir) {
            (Some((cfg, store)), _) => eval_image(store, cfg, &hr, crop, args.quantize)?,
            (None, Some(sr_dir)) => {
                let sr_path = sr_dir.join(name);
                let sr = load_ppm(&sr_path).map_err(|e| {
                    Error::config(format!("missing SR counterpart {}: {e}", sr_path.display()))
                })?;
                eval_direct(&hr, &sr, crop)?
            }
            (None, None) => unreachable!("validated above"),
        };
        println!("{name},{},{}", fmt_metric(p), fmt_metric(s));
        psnrs.push(p);
        ssims.push(s);
    }
    println!("mean,{},{}", fmt_metric(mean(&psnrs)), fmt_metric(mean(&ssims)));
    Ok(0)
}

// ---------------------------------------------------------------------------
// count
// ---------------------------------------------------------------------------

fn parse_hr(text: &str) -> Result<(usize, usize)> {
    let (w, h) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::config(format!("HR size must look like 1280x720, got {text:?}")))?;
    let w: usize = w.trim().parse().map_err(|_| Error::config(format!("bad width in {text:?}")))?;
    let h: usize = h.trim().parse().map_err(|_| Error::config(format!("bad height in {text:?}")))?;
    Ok((h, w))
}

fn cmd_count(args: CountArgs) -> Result<i32> {
    let mut cfg = ModelConfig::new(args.channels, args.blocks, args.scale);
    cfg.enable_scam = !args.no_scam;
    cfg.enable_cfc = !args.no_cfc;
    cfg.enable_glie = !args.no_glie;
    let hr = parse_hr(&args.hr)?;
    let convention = if args.flops_per_mac == 2 {
        FlopConvention::TwoPerMac
    } else {
        FlopConvention::OnePerMac
    };
    let report = count_flops(&cfg, hr, convention)?;
    debug_assert_eq!(report.params, count_params(&cfg)?);

    println!(
        "config: C={} N={} s={} scam={} cfc={} glie={}",
        cfg.channels, cfg.num_blocks, cfg.scale, cfg.enable_scam, cfg.enable_cfc, cfg.enable_glie
    );
    println!("hr output: {}x{}", hr.1, hr.0);
    println!("params: {}", report.params);
    println!("macs:   {}", report.macs);
    println!("flops:  {} ({} per mac)", report.flops, args.flops_per_mac);
    println!();
    let path_width = report
        .breakdown
        .iter()
        .map(|l| l.path.len())
        .max()
        .unwrap_or(5)
        .max("layer".len());
    println!("{:<path_width$}  {:>12}  {:>16}", "layer", "params", "macs");
    for layer in &report.breakdown {
        println!("{:<path_width$}  {:>12}  {:>16}", layer.path, layer.params, layer.macs);
    }
    if let Some(csv) = &args.csv {
        let mut text = String::from("layer,params,macs\n");
        for layer in &report.breakdown {
            text.push_str(&format!("{},{},{}\n", layer.path, layer.params, layer.macs));
        }
        text.push_str(&format!("total,{},{}\n", report.params, report.macs));
        std::fs::write(csv, text)?;
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

/// One finite-difference comparison: name, measured error, allowed error.
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Mean of squares: a smooth scalar readout that keeps every element of
/// `v` in the gradient path.
fn msq<T: Scalar>(g: &mut Graph<T>, v: Var) -> Result<Var> {
    let sq = g.mul(v, v)?;
    Ok(g.mean_all(sq))
}

fn module_leaves(
    store: &WeightStore<f64>,
    prefix: &str,
) -> (Vec<String>, Vec<Tensor<f64>>) {
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (path, t) in store.iter() {
        if path.starts_with(prefix) {
            names.push(path.clone());
            tensors.push(t.clone());
        }
    }
    (names, tensors)
}

fn bind_subset(names: &[String], vars: &[Var]) -> BoundWeights {
    let mut map = IndexMap::new();
    for (name, var) in names.iter().zip(vars) {
        map.insert(name.clone(), *var);
    }
    BoundWeights::from_vars(map)
}

fn check_conv() -> Result<f64> {
    let x = Tensor::rand_uniform(Shape::new(2, 3, 6, 6), 1.0, &mut rng(100));
    let w = Tensor::rand_uniform(Shape::new(4, 3, 3, 3), 0.5, &mut rng(101));
    let b = Tensor::rand_uniform(Shape::new(1, 4, 1, 1), 0.5, &mut rng(102));
    let f = |g: &mut Graph<f64>, vars: &[Var]| {
        let y = g.conv2d(vars[0], vars[1], Some(vars[2]), 1, 1, 1)?;
        msq(g, y)
    };
    Ok(grad_check(&f, &[x, w, b], 1e-5, 8)?.max_rel_err)
}

fn check_layer_norm() -> Result<f64> {
    let x = Tensor::rand_uniform(Shape::new(2, 4, 3, 3), 1.0, &mut rng(103));
    let gamma = Tensor::rand_uniform(Shape::new(1, 4, 1, 1), 0.5, &mut rng(104));
    let beta = Tensor::rand_uniform(Shape::new(1, 4, 1, 1), 0.5, &mut rng(105));
    let f = |g: &mut Graph<f64>, vars: &[Var]| {
        let y = g.layer_norm(vars[0], vars[1], vars[2], 1e-6)?;
        msq(g, y)
    };
    Ok(grad_check(&f, &[x, gamma, beta], 1e-5, 8)?.max_rel_err)
}

fn check_mul() -> Result<f64> {
    let a = Tensor::rand_uniform(Shape::new(2, 3, 4, 4), 1.0, &mut rng(106));
    let b = Tensor::rand_uniform(Shape::new(2, 3, 4, 4), 1.0, &mut rng(107));
    let c = Tensor::rand_uniform(Shape::new(2, 3, 1, 1), 1.0, &mut rng(108));
    let f = |g: &mut Graph<f64>, vars: &[Var]| {
        let same = g.mul(vars[0], vars[1])?;
        let broad = g.mul(same, vars[2])?;
        msq(g, broad)
    };
    Ok(grad_check(&f, &[a, b, c], 1e-5, 8)?.max_rel_err)
}

fn check_scam() -> Result<f64> {
    let cfg = ModelConfig::new(8, 1, 2);
    let store: WeightStore<f64> = init_weights(&cfg, 109)?;
    let (mut names, mut leaves) = module_leaves(&store, "block.0.scam");
    names.push("input".into());
    leaves.push(Tensor::rand_uniform(Shape::new(1, 8, 8, 8), 0.7, &mut rng(110)));
    let f = move |g: &mut Graph<f64>, vars: &[Var]| {
        let w = bind_subset(&names[..names.len() - 1], &vars[..vars.len() - 1]);
        let y = scam_graph(g, vars[vars.len() - 1], &w, "block.0.scam")?;
        msq(g, y)
    };
    Ok(grad_check(&f, &leaves, 1e-5, 4)?.max_rel_err)
}

fn check_cfc() -> Result<f64> {
    let cfg = ModelConfig::new(8, 1, 2);
    let store: WeightStore<f64> = init_weights(&cfg, 111)?;
    let (mut names, mut leaves) = module_leaves(&store, "block.0.cfc");
    names.push("input".into());
    leaves.push(Tensor::rand_uniform(Shape::new(1, 8, 6, 6), 0.7, &mut rng(112)));
    let f = move |g: &mut Graph<f64>, vars: &[Var]| {
        let w = bind_subset(&names[..names.len() - 1], &vars[..vars.len() - 1]);
        let y = cfc_graph(g, vars[vars.len() - 1], &w, "block.0.cfc")?;
        msq(g, y)
    };
    Ok(grad_check(&f, &leaves, 1e-5, 4)?.max_rel_err)
}

fn check_glie() -> Result<f64> {
    let cfg = ModelConfig::new(8, 1, 2);
    let store: WeightStore<f64> = init_weights(&cfg, 113)?;
    let (mut names, mut leaves) = module_leaves(&store, "glie");
    names.push("input".into());
    leaves.push(Tensor::rand_uniform(Shape::new(1, 8, 6, 6), 0.7, &mut rng(114)));
    let f = move |g: &mut Graph<f64>, vars: &[Var]| {
        let w = bind_subset(&names[..names.len() - 1], &vars[..vars.len() - 1]);
        let y = glie_graph(g, vars[vars.len() - 1], &w)?;
        msq(g, y)
    };
    Ok(grad_check(&f, &leaves, 1e-5, 4)?.max_rel_err)
}

fn check_model() -> Result<f64> {
    let cfg = ModelConfig::new(8, 1, 2);
    let store: WeightStore<f64> = init_weights(&cfg, 115)?;
    let lr = Tensor::rand_uniform(Shape::new(1, 3, 16, 16), 0.5, &mut rng(116));
    let names: Vec<String> = store.iter().map(|(k, _)| k.clone()).collect();
    let leaves: Vec<Tensor<f64>> = store.iter().map(|(_, v)| v.clone()).collect();
    // Quadratic readout: some weights have gradients near 1e-9 at init, so
    // the readout must stay kink-free to allow a step large enough to beat
    // finite-difference rounding noise. The loss itself is checked
    // separately on direct leaves.
    let f = move |g: &mut Graph<f64>, vars: &[Var]| {
        let w = bind_subset(&names, vars);
        let input = g.constant(lr.clone());
        let sr = model_graph(g, input, &w, &cfg)?;
        msq(g, sr)
    };
    Ok(grad_check(&f, &leaves, 1e-4, 3)?.max_rel_err)
}

fn check_loss() -> Result<f64> {
    let sr = Tensor::rand_uniform(Shape::new(2, 3, 8, 8), 0.5, &mut rng(118));
    let hr = Tensor::rand_uniform(Shape::new(2, 3, 8, 8), 0.5, &mut rng(119));
    let f = |g: &mut Graph<f64>, vars: &[Var]| {
        sr_loss_graph(g, vars[0], vars[1], &LossConfig { gamma: 0.05 })
    };
    Ok(grad_check(&f, &[sr, hr], 1e-6, 10)?.max_rel_err)
}

/// Run the gradient checks for one module name, or all of them.
pub fn gradcheck_suite(module: &str) -> Result<Vec<CheckOutcome>> {
    const SMOOTH: f64 = 1e-5;
    const KINKED: f64 = 1e-4;
    let all: Vec<(&'static str, fn() -> Result<f64>, f64)> = vec![
        ("conv", check_conv, SMOOTH),
        ("layer_norm", check_layer_norm, SMOOTH),
        ("mul", check_mul, SMOOTH),
        ("scam", check_scam, KINKED),
        ("cfc", check_cfc, SMOOTH),
        ("glie", check_glie, SMOOTH),
        ("model", check_model, KINKED),
        ("loss", check_loss, SMOOTH),
    ];
    let selected: Vec<_> = if module == "all" {
        all
    } else {
        let found: Vec<_> = all.into_iter().filter(|(name, _, _)| *name == module).collect();
        if found.is_empty() {
            return Err(Error::Usage(format!(
                "unknown module {module:?}; use all, conv, layer_norm, mul, scam, cfc, glie, model, or loss"
            )));
        }
        found
    };
    let mut out = Vec::with_capacity(selected.len());
    for (name, check, tolerance) in selected {
        out.push(CheckOutcome { name, max_rel_err: check()?, tolerance });
    }
    Ok(out)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let outcomes = gradcheck_suite(&args.module)?;
    let mut failed = false;
    for o in &outcomes {
        let ok = o.max_rel_err < o.tolerance;
        failed |= !ok;
        println!(
            "{:<10}  max rel err {:.3e}  tolerance {:.0e}  {}",
            o.name,
            o.max_rel_err,
            o.tolerance,
            if ok { "pass" } else { "FAIL" }
        );
    }
    Ok(if failed { 1 } else { 0 })
}
