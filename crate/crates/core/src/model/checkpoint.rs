//! Model checkpoints.
//!
//! Layout, little-endian: `b"MXRC"`, version `u32 = 1`, element width `u32`
//! (4 or 8 bytes), the configuration as ten `u32` fields followed by the
//! dropout as `f64`, the tensor count `u32`, then per tensor its name length
//! `u32`, UTF-8 name, rank `u32`, extents `u32`, and values row-major.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MXRC";
const VERSION: u32 = 1;

fn put(out: &mut Vec<u8>, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| Error::Dimension(format!("{x} does not fit in u32")))?;
    out.extend_from_slice(&x.to_le_bytes());
    Ok(())
}

fn config_fields(cfg: &ModelConfig) -> [usize; 10] {
    [
        cfg.feature_dim,
        cfg.model_dim,
        cfg.encoder_layers,
        cfg.decoder_layers,
        cfg.heads,
        cfg.ffn_dim,
        cfg.conv_kernel,
        cfg.vocab_size,
        cfg.subsample_channels,
        cfg.max_target_len,
    ]
}

pub fn encode_checkpoint<T: Real>(model: &Model<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put(&mut out, VERSION as usize)?;
    put(&mut out, T::BYTES)?;
    for x in config_fields(model.config()) {
        put(&mut out, x)?;
    }
    out.extend_from_slice(&model.config().dropout.to_le_bytes());
    let params = model.params();
    put(&mut out, params.len())?;
    for (name, value) in params.names().iter().zip(params.values()) {
        put(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put(&mut out, value.rank())?;
        for &e in value.shape() {
            put(&mut out, e)?;
        }
        for &v in value.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn err(&self, message: String) -> Error {
        Error::Format {
            offset: self.at as u64,
            message,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err(format!("truncated {what}")));
        };
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

/// Parse a checkpoint stored at either element width into a model at
/// precision `T`.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { bytes, at: 0 };
    let magic = r.take(4, "header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"MXRC\""),
        });
    }
    let version = r.u32("header")?;
    if version != VERSION as usize {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let width = r.u32("header")?;
    if width != 4 && width != 8 {
        return Err(r.err(format!("unsupported element width {width}")));
    }
    let mut f = [0usize; 10];
    for x in &mut f {
        *x = r.u32("configuration")?;
    }
    let dropout = f64::from_le_bytes(r.take(8, "configuration")?.try_into().unwrap());
    let cfg = ModelConfig {
        feature_dim: f[0],
        model_dim: f[1],
        encoder_layers: f[2],
        decoder_layers: f[3],
        heads: f[4],
        ffn_dim: f[5],
        conv_kernel: f[6],
        vocab_size: f[7],
        subsample_channels: f[8],
        max_target_len: f[9],
        dropout,
    };
    let count = r.u32("tensor count")?;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32("tensor name")?;
        let at = r.at;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Format {
                offset: at as u64,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32("tensor shape")?;
        let shape = (0..rank).map(|_| r.u32("tensor shape")).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|n| n.checked_mul(width).map(|b| (n, b)))
            .ok_or_else(|| r.err(format!("extent overflow in {shape:?}")))?;
        let raw = r.take(n.1, "tensor values")?;
        let data = raw
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    T::c(f32::read_le(c) as f64)
                } else {
                    T::c(f64::read_le(c))
                }
            })
            .collect();
        named.push((name, Tensor::new(&shape, data)?));
    }
    if r.at != bytes.len() {
        return Err(r.err("trailing bytes after the last tensor".into()));
    }
    Model::from_named(&cfg, named)
}

pub fn save_checkpoint<T: Real>(model: &Model<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Element width in bytes (4 or 8) recorded in a checkpoint file.
pub fn checkpoint_width(path: &Path) -> Result<usize> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "missing \"MXRC\" header".into(),
        });
    }
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if width != 4 && width != 8 {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported element width {width}"),
        });
    }
    Ok(width)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
