//! Forward graphs for the network: SCAM, CFC, the basic block, the
//! global-local extraction module, and full-model assembly.
//!
//! There are no classic activation functions anywhere; nonlinearity enters
//! exclusively through feature-map products. Every conv keeps spatial size
//! ("same" zero padding of k/2) and stride 1.

use indexmap::IndexMap;

use super::{ModelConfig, WeightStore};
use crate::error::{Error, Result};
use crate::tensor::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Normalization floor for every LayerNorm in the network.
pub const LN_EPS: f64 = 1e-6;

/// Weight tensors inserted into a graph, addressable by parameter path.
pub struct BoundWeights {
    vars: IndexMap<String, Var>,
}

impl BoundWeights {
    /// Wrap vars already inserted into a graph under their parameter paths.
    pub fn from_vars(vars: IndexMap<String, Var>) -> Self {
        BoundWeights { vars }
    }

    pub fn var(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| Error::Structure(format!("missing parameter {path}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, Var)> {
        self.vars.iter().map(|(k, &v)| (k, v))
    }
}

/// Insert every weight into the graph; trainable weights become gradient
/// leaves, frozen ones constants.
pub fn bind_weights<T: Scalar>(
    g: &mut Graph<T>,
    store: &WeightStore<T>,
    trainable: bool,
) -> BoundWeights {
    let mut vars = IndexMap::with_capacity(store.len());
    for (path, t) in store.iter() {
        let v = if trainable {
            g.leaf(t.clone().with_grad())
        } else {
            g.constant(t.clone())
        };
        vars.insert(path.clone(), v);
    }
    BoundWeights { vars }
}

/// Conv with bias under `{path}.w` / `{path}.b`; padding k/2 keeps size.
fn conv<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w: &BoundWeights,
    path: &str,
    groups: usize,
) -> Result<Var> {
    let wv = w.var(&format!("{path}.w"))?;
    let bv = w.var(&format!("{path}.b"))?;
    let k = g.value(wv).shape().h();
    g.conv2d(x, wv, Some(bv), 1, k / 2, groups)
}

fn layer_norm<T: Scalar>(g: &mut Graph<T>, x: Var, w: &BoundWeights, path: &str) -> Result<Var> {
    let gamma = w.var(&format!("{path}.gamma"))?;
    let beta = w.var(&format!("{path}.beta"))?;
    g.layer_norm(x, gamma, beta, LN_EPS)
}

/// Spatial channel adaptive modulation.
///
/// Part 1 gates each channel by a squeezed descriptor:
/// X̂₁ = X ⊙ Conv1×1(GAP(LN(X))). Part 2 splits X̂₁ into four channel
/// groups, filters group 0 at full resolution and groups 1 to 3 at ×2/×4/×8
/// downsampled scales (depthwise 3×3, nearest upsample back), fuses with a
/// 1×1 conv, and gates again: X̂₂ = X̂₁ ⊙ fuse(concat(...)).
pub fn scam_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w: &BoundWeights,
    prefix: &str,
) -> Result<Var> {
    let (_, c, h, wd) = g.value(x).shape().dims();
    if c % 4 != 0 {
        return Err(Error::dim(format!("scam needs C divisible by 4, got {c}")));
    }
    if h % 8 != 0 || wd % 8 != 0 {
        return Err(Error::dim(format!(
            "scam needs spatial dims divisible by 8 (the ×8 branch), got {h}x{wd}"
        )));
    }
    let ln = layer_norm(g, x, w, &format!("{prefix}.ln"))?;
    let gap = g.global_avg_pool(ln);
    let m1 = conv(g, gap, w, &format!("{prefix}.squeeze"), 1)?;
    let x1 = g.mul(x, m1)?;

    let parts = g.channel_split(x1, 4)?;
    let cg = c / 4;
    let mut branches = Vec::with_capacity(4);
    for (j, &part) in parts.iter().enumerate() {
        let path = format!("{prefix}.dw.{j}");
        let b = if j == 0 {
            conv(g, part, w, &path, cg)?
        } else {
            let k = 1 << j; // ×2, ×4, ×8 downsampling rates
            let pooled = g.max_pool(part, k)?;
            let filtered = conv(g, pooled, w, &path, cg)?;
            g.nearest_upsample(filtered, k)?
        };
        branches.push(b);
    }
    let cat = g.concat_channels(&branches)?;
    let m2 = conv(g, cat, w, &format!("{prefix}.fuse"), 1)?;
    g.mul(x1, m2)
}

/// Channel fusion convolution: expand to 2C with a 3×3 conv on the
/// normalized input, bisect, multiply the halves, fuse back to C with 1×1.
pub fn cfc_graph<T: Scalar>(
    g: &mut Graph<T>,
    y: Var,
    w: &BoundWeights,
    prefix: &str,
) -> Result<Var> {
    let ln = layer_norm(g, y, w, &format!("{prefix}.ln"))?;
    let expanded = conv(g, ln, w, &format!("{prefix}.expand"), 1)?;
    let halves = g.channel_split(expanded, 2)?;
    let gated = g.mul(halves[0], halves[1])?;
    conv(g, gated, w, &format!("{prefix}.fuse"), 1)
}

/// One block: pre-norm residual around each enabled sub-module,
/// x → x + SCAM(x) → (·) + CFC(·).
pub fn block_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w: &BoundWeights,
    index: usize,
    cfg: &ModelConfig,
) -> Result<Var> {
    let mut cur = x;
    if cfg.enable_scam {
        let s = scam_graph(g, cur, w, &format!("block.{index}.scam"))?;
        cur = g.add(cur, s)?;
    }
    if cfg.enable_cfc {
        let c = cfc_graph(g, cur, w, &format!("block.{index}.cfc"))?;
        cur = g.add(cur, c)?;
    }
    Ok(cur)
}

/// Global-local information extraction: space-to-depth over 2×2 cells,
/// 1×1 fusion across the 4C stacked sub-maps, PixelShuffle back to full
/// resolution, then residual concat with the input. C -> 2C channels.
pub fn glie_graph<T: Scalar>(g: &mut Graph<T>, z: Var, w: &BoundWeights) -> Result<Var> {
    let stacked = g.pixel_unshuffle(z, 2)?;
    let fused = conv(g, stacked, w, "glie.fuse", 1)?;
    let restored = g.pixel_shuffle(fused, 2)?;
    g.concat_channels(&[restored, z])
}

/// Full model: head conv → N blocks → extraction module → tail conv →
/// PixelShuffle. Inputs of any size are reflect-padded up to multiples of 8
/// and the output is cropped back. The output is NOT clamped; clamping
/// happens only at the image boundary.
pub fn model_graph<T: Scalar>(
    g: &mut Graph<T>,
    lr: Var,
    w: &BoundWeights,
    cfg: &ModelConfig,
) -> Result<Var> {
    cfg.validate()?;
    let (_, ci, h, wd) = g.value(lr).shape().dims();
    if ci != 3 {
        return Err(Error::dim(format!("model input must have 3 channels, got {ci}")));
    }
    let ph = (8 - h % 8) % 8;
    let pw = (8 - wd % 8) % 8;
    let mut cur = if ph + pw > 0 {
        g.reflect_pad_br(lr, ph, pw)
    } else {
        lr
    };
    cur = conv(g, cur, w, "head", 1)?;
    for i in 0..cfg.num_blocks {
        cur = block_graph(g, cur, w, i, cfg)?;
    }
    if cfg.enable_glie {
        cur = glie_graph(g, cur, w)?;
    }
    cur = conv(g, cur, w, "tail", 1)?;
    cur = g.pixel_shuffle(cur, cfg.scale)?;
    if ph + pw > 0 {
        cur = g.crop_tl(cur, h * cfg.scale, wd * cfg.scale)?;
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// Tensor-in / tensor-out wrappers (scratch graph, no gradients)
// ---------------------------------------------------------------------------

fn run_frozen<T: Scalar>(
    store: &WeightStore<T>,
    x: &Tensor<T>,
    build: impl FnOnce(&mut Graph<T>, Var, &BoundWeights) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let input = g.constant(x.clone());
    let bound = bind_weights(&mut g, store, false);
    let out = build(&mut g, input, &bound)?;
    Ok(g.value(out).clone())
}

/// SCAM as a plain function; `prefix` addresses one instance's parameters,
/// e.g. "block.0.scam".
pub fn scam_forward<T: Scalar>(
    x: &Tensor<T>,
    store: &WeightStore<T>,
    prefix: &str,
) -> Result<Tensor<T>> {
    let prefix = prefix.to_owned();
    run_frozen(store, x, move |g, v, w| scam_graph(g, v, w, &prefix))
}

pub fn cfc_forward<T: Scalar>(
    y: &Tensor<T>,
    store: &WeightStore<T>,
    prefix: &str,
) -> Result<Tensor<T>> {
    let prefix = prefix.to_owned();
    run_frozen(store, y, move |g, v, w| cfc_graph(g, v, w, &prefix))
}

pub fn block_forward<T: Scalar>(
    x: &Tensor<T>,
    store: &WeightStore<T>,
    index: usize,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    run_frozen(store, x, move |g, v, w| block_graph(g, v, w, index, cfg))
}

pub fn glie_forward<T: Scalar>(z: &Tensor<T>, store: &WeightStore<T>) -> Result<Tensor<T>> {
    run_frozen(store, z, glie_graph)
}

/// Validating inference entry point; output is unclamped.
pub fn model_forward<T: Scalar>(
    lr: &Tensor<T>,
    store: &WeightStore<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    store.validate(cfg)?;
    run_frozen(store, lr, move |g, v, w| model_graph(g, v, w, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_weights;
    use crate::tensor::{ops, Shape};
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn scam_preserves_shape() {
        let cfg = ModelConfig::new(16, 1, 2);
        let store: WeightStore<f64> = init_weights(&cfg, 1).unwrap();
        let x = Tensor::rand_uniform(Shape::new(1, 16, 16, 16), 1.0, &mut rng(2));
        let y = scam_forward(&x, &store, "block.0.scam").unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.is_finite());
    }

    #[test]
    fn scam_identity_modulation() {
        // Both 1×1 convs write all-ones maps (w = 0, b = 1), so both gates
        // multiply by exactly one and the input passes through unchanged.
        let cfg = ModelConfig::new(8, 1, 2);
        let mut store: WeightStore<f64> = init_weights(&cfg, 3).unwrap();
        for path in ["block.0.scam.squeeze", "block.0.scam.fuse"] {
            let w = store.get_mut(&format!("{path}.w")).unwrap();
            *w = Tensor::zeros(w.shape());
            let b = store.get_mut(&format!("{path}.b")).unwrap();
            *b = Tensor::ones(b.shape());
        }
        let x = Tensor::rand_uniform(Shape::new(1, 8, 8, 8), 1.0, &mut rng(4));
        let y = scam_forward(&x, &store, "block.0.scam").unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn scam_rejects_bad_spatial_dims() {
        let cfg = ModelConfig::new(8, 1, 2);
        let store: WeightStore<f64> = init_weights(&cfg, 5).unwrap();
        let x = Tensor::ones(Shape::new(1, 8, 12, 12));
        assert!(scam_forward(&x, &store, "block.0.scam").is_err());
    }

    #[test]
    fn cfc_preserves_shape() {
        let cfg = ModelConfig::new(8, 1, 2);
        let store: WeightStore<f64> = init_weights(&cfg, 6).unwrap();
        let y = Tensor::rand_uniform(Shape::new(2, 8, 4, 4), 1.0, &mut rng(7));
        let out = cfc_forward(&y, &store, "block.0.cfc").unwrap();
        assert_eq!(out.shape(), y.shape());
        assert!(out.is_finite());
    }

    #[test]
    fn cfc_constructed_identity_path() {
        // expand: first C outputs copy LN(y) via a center tap, last C outputs
        // are constant one; fuse is the identity 1×1. Then
        // out = fuse(LN(y) ⊙ 1) = LN(y).
        let c = 8;
        let cfg = ModelConfig::new(c, 1, 2);
        let mut store: WeightStore<f64> = init_weights(&cfg, 8).unwrap();

        let ew = store.get_mut("block.0.cfc.expand.w").unwrap();
        *ew = Tensor::zeros(ew.shape());
        for o in 0..c {
            let i = ew.shape().idx(o, o, 1, 1);
            ew.data_mut()[i] = 1.0;
        }
        let eb = store.get_mut("block.0.cfc.expand.b").unwrap();
        *eb = Tensor::zeros(eb.shape());
        for o in c..2 * c {
            eb.data_mut()[o] = 1.0;
        }
        let fw = store.get_mut("block.0.cfc.fuse.w").unwrap();
        *fw = Tensor::zeros(fw.shape());
        for o in 0..c {
            let i = fw.shape().idx(o, o, 0, 0);
            fw.data_mut()[i] = 1.0;
        }
        let fb = store.get_mut("block.0.cfc.fuse.b").unwrap();
        *fb = Tensor::zeros(fb.shape());

        let y = Tensor::rand_uniform(Shape::new(1, c, 6, 6), 1.0, &mut rng(9));
        let out = cfc_forward(&y, &store, "block.0.cfc").unwrap();
        let want = ops::layer_norm(
            &y,
            store.get("block.0.cfc.ln.gamma").unwrap(),
            store.get("block.0.cfc.ln.beta").unwrap(),
            LN_EPS,
        )
        .unwrap();
        for (a, b) in out.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn block_with_all_flags_off_is_identity() {
        let mut cfg = ModelConfig::new(8, 1, 2);
        cfg.enable_scam = false;
        cfg.enable_cfc = false;
        let store: WeightStore<f64> = init_weights(&cfg, 10).unwrap();
        let x = Tensor::rand_uniform(Shape::new(1, 8, 8, 8), 1.0, &mut rng(11));
        let y = block_forward(&x, &store, 0, &cfg).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn block_preserves_shape() {
        let cfg = ModelConfig::new(16, 1, 2);
        let store: WeightStore<f64> = init_weights(&cfg, 12).unwrap();
        let x = Tensor::rand_uniform(Shape::new(1, 16, 16, 16), 1.0, &mut rng(13));
        let y = block_forward(&x, &store, 0, &cfg).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn glie_doubles_channels() {
        let cfg = ModelConfig::new(8, 1, 2);
        let store: WeightStore<f64> = init_weights(&cfg, 14).unwrap();
        let z = Tensor::rand_uniform(Shape::new(1, 8, 8, 8), 1.0, &mut rng(15));
        let out = glie_forward(&z, &store).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 16, 8, 8));
    }

    #[test]
    fn glie_identity_permutation_reproduces_input() {
        // Build the fuse conv from the composed index maps: channel i of the
        // space-to-depth stack carries cell (dy, dx) = ((i%4)/2, i%2) of
        // original channel i/4, and the following shuffle reads its input
        // channel o into exactly that cell of original channel o/4. The
        // permutation that makes shuffle ∘ conv ∘ unshuffle the identity is
        // therefore o = i.
        let c = 8;
        let cfg = ModelConfig::new(c, 1, 2);
        let mut store: WeightStore<f64> = init_weights(&cfg, 16).unwrap();
        let fw = store.get_mut("glie.fuse.w").unwrap();
        *fw = Tensor::zeros(fw.shape());
        for i in 0..4 * c {
            let (cell, orig) = (i % 4, i / 4);
            let o = orig * 4 + cell;
            let idx = fw.shape().idx(o, i, 0, 0);
            fw.data_mut()[idx] = 1.0;
        }
        let fb = store.get_mut("glie.fuse.b").unwrap();
        *fb = Tensor::zeros(fb.shape());

        let z = Tensor::rand_uniform(Shape::new(1, c, 6, 6), 1.0, &mut rng(17));
        let out = glie_forward(&z, &store).unwrap();
        let halves = ops::channel_split(&out, 2).unwrap();
        assert_eq!(halves[0].data(), z.data());
        assert_eq!(halves[1].data(), z.data());
    }

    #[test]
    fn model_shape_contracts() {
        for (n, hw, s, want) in [
            (1usize, (16usize, 16usize), 2usize, (32usize, 32usize)),
            (2, (24, 24), 3, (72, 72)),
            (1, (16, 24), 4, (64, 96)),
        ] {
            let cfg = ModelConfig::new(8, 1, s);
            let store: WeightStore<f64> = init_weights(&cfg, 18).unwrap();
            let lr = Tensor::rand_uniform(Shape::new(n, 3, hw.0, hw.1), 0.5, &mut rng(19));
            let srt = model_forward(&lr, &store, &cfg).unwrap();
            assert_eq!(srt.shape(), Shape::new(n, 3, want.0, want.1));
            assert!(srt.is_finite());
        }
    }

    #[test]
    fn model_handles_unaligned_input_via_padding() {
        let cfg = ModelConfig::new(8, 1, 2);
        let store: WeightStore<f64> = init_weights(&cfg, 20).unwrap();
        let lr = Tensor::rand_uniform(Shape::new(1, 3, 11, 13), 0.5, &mut rng(21));
        let srt = model_forward(&lr, &store, &cfg).unwrap();
        assert_eq!(srt.shape(), Shape::new(1, 3, 22, 26));
        assert!(srt.is_finite());
    }

    #[test]
    fn aligned_input_skips_pad_and_crop_exactly() {
        // For inputs already multiples of 8 the padded path must coincide
        // bitwise with the bare trunk composed by hand.
        let cfg = ModelConfig::new(8, 2, 2);
        let store: WeightStore<f64> = init_weights(&cfg, 22).unwrap();
        let lr = Tensor::rand_uniform(Shape::new(1, 3, 16, 16), 0.5, &mut rng(23));
        let full = model_forward(&lr, &store, &cfg).unwrap();

        let mut g = Graph::new();
        let input = g.constant(lr.clone());
        let w = bind_weights(&mut g, &store, false);
        let mut cur = conv(&mut g, input, &w, "head", 1).unwrap();
        for i in 0..cfg.num_blocks {
            cur = block_graph(&mut g, cur, &w, i, &cfg).unwrap();
        }
        cur = glie_graph(&mut g, cur, &w).unwrap();
        cur = conv(&mut g, cur, &w, "tail", 1).unwrap();
        cur = g.pixel_shuffle(cur, cfg.scale).unwrap();
        assert_eq!(full.data(), g.value(cur).data());
    }

    #[test]
    fn all_config_combinations_hold_shape_contract() {
        for c in [8usize, 16] {
            for n in [1usize, 2, 3] {
                for s in [2usize, 3, 4] {
                    let cfg = ModelConfig::new(c, n, s);
                    let store: WeightStore<f32> = init_weights(&cfg, 24).unwrap();
                    let lr =
                        Tensor::rand_uniform(Shape::new(1, 3, 12, 20), 0.5, &mut rng(25));
                    let srt = model_forward(&lr, &store, &cfg).unwrap();
                    assert_eq!(srt.shape(), Shape::new(1, 3, 12 * s, 20 * s));
                    assert!(srt.is_finite(), "non-finite at C={c} N={n} s={s}");
                }
            }
        }
    }

    #[test]
    fn missing_weight_yields_structure_error() {
        let cfg = ModelConfig::new(8, 1, 2);
        let mut bad = ModelConfig::new(8, 1, 2);
        bad.enable_glie = false;
        let store: WeightStore<f64> = init_weights(&bad, 26).unwrap();
        let lr = Tensor::ones(Shape::new(1, 3, 8, 8));
        let err = model_forward(&lr, &store, &cfg).unwrap_err();
        assert!(matches!(err, Error::Structure(_)), "{err}");
        assert!(err.to_string().contains("glie.fuse"), "{err}");
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        use crate::signal::{sr_loss_graph, LossConfig};
        use crate::tensor::gradcheck::grad_check;

        let cfg = ModelConfig::new(4, 1, 2);
        let store: WeightStore<f64> = init_weights(&cfg, 27).unwrap();
        let lr = Tensor::rand_uniform(Shape::new(1, 3, 8, 8), 0.5, &mut rng(28));
        let hr = Tensor::rand_uniform(Shape::new(1, 3, 16, 16), 0.5, &mut rng(29));

        let names: Vec<String> = store.iter().map(|(k, _)| k.clone()).collect();
        let leaves: Vec<Tensor<f64>> = store.iter().map(|(_, v)| v.clone()).collect();
        let f = move |g: &mut Graph<f64>, vars: &[Var]| {
            // Bind the externally supplied leaf vars under their parameter
            // paths so gradients flow back to them.
            let mut bound = IndexMap::new();
            for (name, var) in names.iter().zip(vars) {
                bound.insert(name.clone(), *var);
            }
            let w = BoundWeights { vars: bound };
            let input = g.constant(lr.clone());
            let target = g.constant(hr.clone());
            let sr = model_graph(g, input, &w, &cfg)?;
            sr_loss_graph(g, sr, target, &LossConfig { gamma: 0.05 })
        };
        let report = grad_check(&f, &leaves, 1e-5, 3).unwrap();
        assert!(report.max_rel_err < 1e-4, "rel {}", report.max_rel_err);
        assert!(report.coords_checked >= 50, "{}", report.coords_checked);
    }
}
