//! Parameter and multiply-accumulate accounting.
//!
//! The counters walk the architecture with closed-form per-layer formulas
//! rather than reading the weight enumeration, so the invariant
//! `count_params(cfg) == init_weights(cfg).num_scalars()` is a genuine
//! cross-check between two independent descriptions of the network.
//!
//! Conventions: a conv layer costs `Cout·(Cin/groups)·k²·H·W` MACs on its
//! output map plus `Cout` bias parameters; elementwise work (LayerNorm,
//! products, residual adds) is counted once per element; the 1×1 conv that
//! acts on the globally pooled 1×1 descriptor contributes its parameters
//! but no meaningful MAC volume at image scale and is counted as zero MACs.

use crate::error::{Error, Result};
use crate::nn::ModelConfig;

/// Cost of one named piece of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub path: String,
    pub params: u64,
    pub macs: u64,
}

/// Totals plus a per-layer breakdown; `flops` follows the selected
/// MAC-to-FLOP convention.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub params: u64,
    pub macs: u64,
    /// 2·macs when the two-FLOPs-per-MAC convention is selected, else macs.
    pub flops: u64,
    pub breakdown: Vec<LayerCost>,
}

/// How to express MACs as FLOPs; papers are split on this, so the report
/// carries the choice explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlopConvention {
    #[default]
    TwoPerMac,
    OnePerMac,
}

struct Walk {
    items: Vec<LayerCost>,
}

impl Walk {
    fn conv(&mut self, path: &str, cin: usize, cout: usize, k: usize, groups: usize, hw: u64) {
        let per_out = (cin / groups) as u64 * (k * k) as u64;
        self.items.push(LayerCost {
            path: path.to_owned(),
            params: cout as u64 * per_out + cout as u64,
            macs: cout as u64 * per_out * hw,
        });
    }

    fn ln(&mut self, path: &str, c: usize, hw: u64) {
        self.items.push(LayerCost {
            path: path.to_owned(),
            params: 2 * c as u64,
            macs: c as u64 * hw,
        });
    }

    fn elementwise(&mut self, path: &str, elems: u64) {
        self.items.push(LayerCost { path: path.to_owned(), params: 0, macs: elems });
    }
}

/// Exact parameter count for a configuration.
pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    Ok(walk(cfg, 8, 8)?.items.iter().map(|l| l.params).sum())
}

/// Full cost report for super-resolving to an HR output of `hr` = (H, W).
/// The HR size must be divisible by the scale; trunk work is counted at LR
/// resolution, exactly where the network runs.
pub fn count_flops(
    cfg: &ModelConfig,
    hr: (usize, usize),
    convention: FlopConvention,
) -> Result<CostReport> {
    let (h, w) = hr;
    if h == 0 || w == 0 || h % cfg.scale != 0 || w % cfg.scale != 0 {
        return Err(Error::dim(format!(
            "HR size {h}x{w} must be positive and divisible by scale {}",
            cfg.scale
        )));
    }
    let walk = walk(cfg, h / cfg.scale, w / cfg.scale)?;
    let params = walk.items.iter().map(|l| l.params).sum();
    let macs: u64 = walk.items.iter().map(|l| l.macs).sum();
    let flops = match convention {
        FlopConvention::TwoPerMac => 2 * macs,
        FlopConvention::OnePerMac => macs,
    };
    Ok(CostReport { params, macs, flops, breakdown: walk.items })
}

fn walk(cfg: &ModelConfig, lh: usize, lw: usize) -> Result<Walk> {
    cfg.validate()?;
    let c = cfg.channels;
    let hw = (lh * lw) as u64;
    let mut w = Walk { items: Vec::new() };

    w.conv("head", 3, c, 3, 1, hw);

    for i in 0..cfg.num_blocks {
        if cfg.enable_scam {
            let p = format!("block.{i}.scam");
            w.ln(&format!("{p}.ln"), c, hw);
            // Squeeze conv sees the pooled 1x1 descriptor: parameters only.
            w.conv(&format!("{p}.squeeze"), c, c, 1, 1, 0);
            w.elementwise(&format!("{p}.gate1"), c as u64 * hw);
            let cg = c / 4;
            for (j, rate) in [1usize, 2, 4, 8].iter().enumerate() {
                let branch_hw = ((lh / rate) * (lw / rate)) as u64;
                w.conv(&format!("{p}.dw.{j}"), cg, cg, 3, cg, branch_hw);
            }
            w.conv(&format!("{p}.fuse"), c, c, 1, 1, hw);
            w.elementwise(&format!("{p}.gate2"), c as u64 * hw);
            w.elementwise(&format!("block.{i}.residual1"), c as u64 * hw);
        }
        if cfg.enable_cfc {
            let p = format!("block.{i}.cfc");
            w.ln(&format!("{p}.ln"), c, hw);
            w.conv(&format!("{p}.expand"), c, 2 * c, 3, 1, hw);
            w.elementwise(&format!("{p}.gate"), c as u64 * hw);
            w.conv(&format!("{p}.fuse"), c, c, 1, 1, hw);
            w.elementwise(&format!("block.{i}.residual2"), c as u64 * hw);
        }
    }

    if cfg.enable_glie {
        // The 1x1 fusion runs on the 4C x (H/2) x (W/2) stack.
        w.conv("glie.fuse", 4 * c, 4 * c, 1, 1, hw / 4);
    }

    let s2 = cfg.scale * cfg.scale;
    w.conv("tail", cfg.tail_in(), 3 * s2, 3, 1, hw);
    Ok(w)
}
