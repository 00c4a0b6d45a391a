//! `SAMSMODL` model files.
//!
//! Layout, little-endian: magic `SAMSMODL`, `u16` version, architecture
//! (`u32` input channels, stem channels, stage count, `(channels, blocks)`
//! per stage, classes, input size), `u32` band count followed by the
//! per-band means and standard deviations as `f32`, then every parameter
//! and running statistic of the network as `f32` in declaration order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Slot;
use super::network::{Network, NetworkConfig};
use super::train::{Model, Normalization};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"SAMSMODL";
pub const MODEL_VERSION: u16 = 1;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let cfg = model.network.config();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let mut u32s = vec![cfg.in_channels, cfg.stem_channels, cfg.stages.len()];
    for &(c, b) in &cfg.stages {
        u32s.extend([c, b]);
    }
    u32s.extend([cfg.num_classes, cfg.input_size, model.norm.mean.len()]);
    for v in u32s {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in model.norm.mean.iter().chain(&model.norm.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    model.network.visit(&mut |a| {
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::MalformedFile("model file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFiniteData("model parameter".into()));
        }
        Ok(v)
    }
}

const MAX_STAGES: usize = 64;

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MODEL_MAGIC {
        return Err(Error::MalformedFile("not a SAMSMODL file".into()));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(Error::MalformedFile(format!("unsupported model version {version}")));
    }
    let in_channels = c.u32()?;
    let stem_channels = c.u32()?;
    let n_stages = c.u32()?;
    if n_stages > MAX_STAGES {
        return Err(Error::MalformedFile(format!("implausible stage count {n_stages}")));
    }
    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        stages.push((c.u32()?, c.u32()?));
    }
    let config = NetworkConfig {
        in_channels,
        stem_channels,
        stages,
        num_classes: c.u32()?,
        input_size: c.u32()?,
    };
    config
        .validate()
        .map_err(|e| Error::MalformedFile(format!("bad architecture: {e}")))?;
    let bands = c.u32()?;
    if bands != in_channels {
        return Err(Error::MalformedFile(format!(
            "{bands} normalisation bands for {in_channels} input channels"
        )));
    }
    let mean = (0..bands).map(|_| c.f32()).collect::<Result<Vec<_>>>()?;
    let std = (0..bands).map(|_| c.f32()).collect::<Result<Vec<_>>>()?;

    // the initial values are overwritten below; the seed only fixes shapes
    let mut network = Network::<f32>::new(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut err = None;
    network.visit_mut(&mut |s| {
        let dst = match s {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(b) => b,
        };
        for v in dst.iter_mut() {
            match c.f32() {
                Ok(x) => *v = x,
                Err(e) => {
                    err.get_or_insert(e);
                    return;
                }
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if c.pos != bytes.len() {
        return Err(Error::MalformedFile(format!(
            "{} trailing bytes after model parameters",
            bytes.len() - c.pos
        )));
    }
    network.mark_stats_ready();
    Ok(Model {
        network,
        norm: Normalization { mean, std },
    })
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::from(e).at(path))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_model(&bytes).map_err(|e| e.at(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> Model {
        let cfg = NetworkConfig::reduced();
        let mut net = Network::<f32>::new(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        net.blocks[0].bn1.running_mean[0] = 0.25;
        net.mark_stats_ready();
        Model {
            network: net,
            norm: Normalization {
                mean: (0..9).map(|i| i as f32).collect(),
                std: vec![2.0; 9],
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let m = tiny_model();
        let bytes = encode_model(&m);
        assert_eq!(&bytes[..8], b"SAMSMODL");
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back.norm, m.norm);
        assert_eq!(back.network.flat_values(), m.network.flat_values());
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_model(&tiny_model());
        assert!(decode_model(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_model(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(decode_model(&magic), Err(Error::MalformedFile(_))));
    }
}
