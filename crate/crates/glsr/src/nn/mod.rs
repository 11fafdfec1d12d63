//! Architecture description: configuration, parameter enumeration, weights.
//!
//! [`enumerate_layers`] is the single source of truth for which parameters
//! exist at a given configuration; initialization, checkpoint validation,
//! and the forward builders all key off the same dot-separated paths.

pub mod model;

use indexmap::IndexMap;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, Scalar, Shape, Tensor};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature width C; must be divisible by 4 (the four-way split).
    pub channels: usize,
    /// Number of stacked blocks N.
    pub num_blocks: usize,
    /// Upscaling factor s, one of {2, 3, 4}.
    pub scale: usize,
    pub enable_scam: bool,
    pub enable_cfc: bool,
    pub enable_glie: bool,
    pub dtype: Dtype,
}

impl ModelConfig {
    /// All modules enabled, single precision.
    pub fn new(channels: usize, num_blocks: usize, scale: usize) -> Self {
        ModelConfig {
            channels,
            num_blocks,
            scale,
            enable_scam: true,
            enable_cfc: true,
            enable_glie: true,
            dtype: Dtype::Single,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels % 4 != 0 {
            return Err(Error::config(format!(
                "channels must be a positive multiple of 4, got {}",
                self.channels
            )));
        }
        if self.num_blocks == 0 {
            return Err(Error::config("num_blocks must be at least 1"));
        }
        if !(2..=4).contains(&self.scale) {
            return Err(Error::config(format!(
                "scale must be 2, 3, or 4, got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Channel width entering the tail conv: 2C after the extraction module,
    /// plain C when it is ablated.
    pub fn tail_in(&self) -> usize {
        if self.enable_glie {
            2 * self.channels
        } else {
            self.channels
        }
    }
}

/// What a parameter is, which decides its initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight { groups: usize },
    ConvBias,
    LnGamma,
    LnBeta,
}

/// One parameter tensor of the architecture.
#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub path: String,
    pub shape: Shape,
    pub kind: ParamKind,
}

fn push_conv(out: &mut Vec<LayerSpec>, path: &str, cout: usize, cpg: usize, k: usize, groups: usize) {
    out.push(LayerSpec {
        path: format!("{path}.w"),
        shape: Shape::new(cout, cpg, k, k),
        kind: ParamKind::ConvWeight { groups },
    });
    out.push(LayerSpec {
        path: format!("{path}.b"),
        shape: Shape::new(1, cout, 1, 1),
        kind: ParamKind::ConvBias,
    });
}

fn push_ln(out: &mut Vec<LayerSpec>, path: &str, c: usize) {
    out.push(LayerSpec {
        path: format!("{path}.gamma"),
        shape: Shape::new(1, c, 1, 1),
        kind: ParamKind::LnGamma,
    });
    out.push(LayerSpec {
        path: format!("{path}.beta"),
        shape: Shape::new(1, c, 1, 1),
        kind: ParamKind::LnBeta,
    });
}

/// Every parameter of `cfg`'s architecture, in deterministic order.
pub fn enumerate_layers(cfg: &ModelConfig) -> Result<Vec<LayerSpec>> {
    cfg.validate()?;
    let c = cfg.channels;
    let cg = c / 4;
    let mut out = Vec::new();

    push_conv(&mut out, "head", c, 3, 3, 1);
    for i in 0..cfg.num_blocks {
        if cfg.enable_scam {
            let p = format!("block.{i}.scam");
            push_ln(&mut out, &format!("{p}.ln"), c);
            push_conv(&mut out, &format!("{p}.squeeze"), c, c, 1, 1);
            for j in 0..4 {
                push_conv(&mut out, &format!("{p}.dw.{j}"), cg, 1, 3, cg);
            }
            push_conv(&mut out, &format!("{p}.fuse"), c, c, 1, 1);
        }
        if cfg.enable_cfc {
            let p = format!("block.{i}.cfc");
            push_ln(&mut out, &format!("{p}.ln"), c);
            push_conv(&mut out, &format!("{p}.expand"), 2 * c, c, 3, 1);
            push_conv(&mut out, &format!("{p}.fuse"), c, c, 1, 1);
        }
    }
    if cfg.enable_glie {
        push_conv(&mut out, "glie.fuse", 4 * c, 4 * c, 1, 1);
    }
    push_conv(&mut out, "tail", 3 * cfg.scale * cfg.scale, cfg.tail_in(), 3, 1);
    Ok(out)
}

/// Ordered map from parameter path to tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore<T: Scalar> {
    map: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for WeightStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> WeightStore<T> {
    pub fn new() -> Self {
        WeightStore { map: IndexMap::new() }
    }

    pub fn insert(&mut self, path: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let path = path.into();
        if self.map.contains_key(&path) {
            return Err(Error::Structure(format!("duplicate parameter path {path}")));
        }
        self.map.insert(path, t);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.map.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(path)
    }

    pub fn get_req(&self, path: &str) -> Result<&Tensor<T>> {
        self.map
            .get(path)
            .ok_or_else(|| Error::Structure(format!("missing parameter {path}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    /// Exact structural match against `cfg`'s layer enumeration: every path
    /// present with the right shape and nothing extra.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = enumerate_layers(cfg)?;
        for spec in &specs {
            match self.map.get(&spec.path) {
                None => {
                    return Err(Error::Structure(format!(
                        "missing parameter {}",
                        spec.path
                    )))
                }
                Some(t) if t.shape() != spec.shape => {
                    return Err(Error::Structure(format!(
                        "parameter {} has shape {}, expected {}",
                        spec.path,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if self.map.len() != specs.len() {
            let known: std::collections::HashSet<&str> =
                specs.iter().map(|s| s.path.as_str()).collect();
            let extra = self
                .map
                .keys()
                .find(|k| !known.contains(k.as_str()))
                .expect("length mismatch implies an extra path");
            return Err(Error::Structure(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn convert<U: Scalar>(&self) -> WeightStore<U> {
        let mut map = IndexMap::with_capacity(self.map.len());
        for (k, v) in &self.map {
            map.insert(k.clone(), v.map(|x| U::from_f64(x.to_f64())));
        }
        WeightStore { map }
    }
}

/// Deterministic initialization: conv weights uniform(−a, a) with
/// a = sqrt(6 / (fan_in + fan_out)), biases zero, LN gamma 1 and beta 0.
/// For grouped convs the fans count one group's connections:
/// fan_in = (Cin/groups)·k², fan_out = (Cout/groups)·k².
pub fn init_weights<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<WeightStore<T>> {
    let specs = enumerate_layers(cfg)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for spec in specs {
        let t = match spec.kind {
            ParamKind::ConvWeight { groups } => {
                let (cout, cpg, k, _) = spec.shape.dims();
                let fan_in = cpg * k * k;
                let fan_out = cout / groups * k * k;
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::rand_uniform(spec.shape, a, &mut rng)
            }
            ParamKind::ConvBias | ParamKind::LnBeta => Tensor::zeros(spec.shape),
            ParamKind::LnGamma => Tensor::ones(spec.shape),
        };
        store.insert(spec.path, t)?;
    }
    Ok(store)
}
