//! Binary feature matrices.
//!
//! Layout, little-endian: `b"MXRF"`, version `u32 = 1`, frames `u32`,
//! feature dim `u32`, then `frames·dim` `f32` values row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"MXRF";
const VERSION: u32 = 1;
const HEADER: usize = 16;

pub fn encode_features(features: &Tensor<f32>) -> Result<Vec<u8>> {
    let [t, f] = features.shape() else {
        return Err(Error::Dimension(format!(
            "feature matrix must be rank 2, got {:?}",
            features.shape()
        )));
    };
    let ext = |x: usize| {
        u32::try_from(x).map_err(|_| Error::Dimension(format!("extent {x} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER + features.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ext(*t)?.to_le_bytes());
    out.extend_from_slice(&ext(*f)?.to_le_bytes());
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Tensor<f32>> {
    let fmt = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| fmt(at, "truncated header".into()))
    };
    match bytes.get(..4) {
        Some(m) if m == FEATURE_MAGIC => {}
        Some(m) => return Err(fmt(0, format!("bad magic {m:?}, expected \"MXRF\""))),
        None => return Err(fmt(0, "truncated header".into())),
    }
    let version = word(4)?;
    if version != VERSION {
        return Err(fmt(4, format!("unsupported version {version}")));
    }
    let t = word(8)? as usize;
    let f = word(12)? as usize;
    let n = t
        .checked_mul(f)
        .and_then(|n| n.checked_mul(4).map(|b| (n, b)))
        .ok_or_else(|| fmt(8, format!("extent overflow: {t}×{f}")))?;
    let payload = &bytes[HEADER..];
    if payload.len() < n.1 {
        return Err(fmt(
            HEADER + payload.len(),
            format!("truncated payload: header claims {t}×{f} values ({} bytes), {} present", n.1, payload.len()),
        ));
    }
    if payload.len() > n.1 {
        return Err(fmt(HEADER + n.1, "trailing bytes after payload".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&[t, f], data)
}

pub fn write_features(features: &Tensor<f32>, path: &Path) -> Result<()> {
    let bytes = encode_features(features)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}
