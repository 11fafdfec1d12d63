//! Binary weight checkpoints.
//!
//! Layout, all integers little-endian:
//!   magic "GLSR" | version u32 | C u32 | N u32 | s u32 | flags u32 |
//!   tensor count u32 | per tensor: name len u16, UTF-8 name, rank u8,
//!   dims u32 each, then f32 data.
//!
//! Weights are stored in f32 regardless of the precision they were trained
//! in; the enumeration order of the model config fixes the tensor order, so
//! identical weights always serialize to identical bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ModelConfig, WeightStore};
use crate::tensor::{Scalar, Shape, Tensor};

const MAGIC: &[u8; 4] = b"GLSR";
const VERSION: u32 = 1;

const FLAG_SCAM: u32 = 1;
const FLAG_CFC: u32 = 2;
const FLAG_GLIE: u32 = 4;

pub fn encode_checkpoint<T: Scalar>(cfg: &ModelConfig, store: &WeightStore<T>) -> Result<Vec<u8>> {
    store.validate(cfg)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let mut flags = 0u32;
    if cfg.enable_scam {
        flags |= FLAG_SCAM;
    }
    if cfg.enable_cfc {
        flags |= FLAG_CFC;
    }
    if cfg.enable_glie {
        flags |= FLAG_GLIE;
    }
    for v in [cfg.channels as u32, cfg.num_blocks as u32, cfg.scale as u32, flags] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (path, t) in store.iter() {
        let name = path.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(4);
        for d in t.shape().0 {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.bytes.len(),
                msg: format!("truncated checkpoint while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, WeightStore<f32>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse { offset: 0, msg: "bad magic, not a checkpoint file".into() });
    }
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            msg: format!("unknown checkpoint version {version}, expected {VERSION}"),
        });
    }
    let channels = r.u32_le("channels")? as usize;
    let num_blocks = r.u32_le("num_blocks")? as usize;
    let scale = r.u32_le("scale")? as usize;
    let flags = r.u32_le("flags")?;
    let mut cfg = ModelConfig::new(channels, num_blocks, scale);
    cfg.enable_scam = flags & FLAG_SCAM != 0;
    cfg.enable_cfc = flags & FLAG_CFC != 0;
    cfg.enable_glie = flags & FLAG_GLIE != 0;
    cfg.validate()?;

    let count = r.u32_le("tensor count")? as usize;
    let mut store = WeightStore::new();
    for _ in 0..count {
        let name_len = r.u16_le("name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Parse { offset: name_at, msg: "tensor name is not UTF-8".into() })?
            .to_owned();
        let rank = r.take(1, "rank")?[0];
        if rank != 4 {
            return Err(Error::Parse {
                offset: r.pos - 1,
                msg: format!("tensor {name} has rank {rank}, expected 4"),
            });
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32_le("dimension")? as usize;
        }
        let shape = Shape(dims);
        let raw = r.take(4 * shape.numel(), "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.insert(name, Tensor::from_vec(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            msg: format!("{} trailing bytes after last tensor", bytes.len() - r.pos),
        });
    }
    store.validate(&cfg)?;
    Ok((cfg, store))
}

pub fn save_weights<T: Scalar>(
    path: impl AsRef<Path>,
    cfg: &ModelConfig,
    store: &WeightStore<T>,
) -> Result<()> {
    Ok(std::fs::write(path, encode_checkpoint(cfg, store)?)?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(ModelConfig, WeightStore<f32>)> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_weights;

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = ModelConfig::new(8, 2, 3);
        let store: WeightStore<f32> = init_weights(&cfg, 7).unwrap();
        let bytes = encode_checkpoint(&cfg, &store).unwrap();
        let (cfg2, store2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(encode_checkpoint(&cfg2, &store2).unwrap(), bytes);
    }

    #[test]
    fn ablation_flags_survive_the_trip() {
        let mut cfg = ModelConfig::new(8, 1, 2);
        cfg.enable_cfc = false;
        let store: WeightStore<f32> = init_weights(&cfg, 8).unwrap();
        let bytes = encode_checkpoint(&cfg, &store).unwrap();
        let (cfg2, _) = decode_checkpoint(&bytes).unwrap();
        assert!(!cfg2.enable_cfc);
        assert!(cfg2.enable_scam && cfg2.enable_glie);
    }

    #[test]
    fn rejects_corrupted_magic() {
        let cfg = ModelConfig::new(8, 1, 2);
        let store: WeightStore<f32> = init_weights(&cfg, 9).unwrap();
        let mut bytes = encode_checkpoint(&cfg, &store).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bytes).unwrap_err(),
            Error::Parse { offset: 0, .. }
        ));
    }

    #[test]
    fn rejects_unknown_version() {
        let cfg = ModelConfig::new(8, 1, 2);
        let store: WeightStore<f32> = init_weights(&cfg, 10).unwrap();
        let mut bytes = encode_checkpoint(&cfg, &store).unwrap();
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        let err = decode_checkpoint(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
    }

    #[test]
    fn rejects_truncation() {
        let cfg = ModelConfig::new(8, 1, 2);
        let store: WeightStore<f32> = init_weights(&cfg, 11).unwrap();
        let bytes = encode_checkpoint(&cfg, &store).unwrap();
        let err = decode_checkpoint(&bytes[..bytes.len() - 5]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn f64_store_serializes_like_its_f32_image() {
        let cfg = ModelConfig::new(8, 1, 2);
        let w64: WeightStore<f64> = init_weights(&cfg, 12).unwrap();
        let w32: WeightStore<f32> = w64.convert();
        assert_eq!(
            encode_checkpoint(&cfg, &w64).unwrap(),
            encode_checkpoint(&cfg, &w32).unwrap()
        );
    }
}
