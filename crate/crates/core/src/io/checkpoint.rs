//! Model checkpoints.
//!
//! ```text
//! "UEMC"  u32 version = 1
//! u32 config length, config text (`key = value` lines)
//! u32 parameter count
//! per parameter: u32 name length, name, UEMF blob (f64)
//! ```
//!
//! Blobs are stored as `[numel / last_dim, last_dim]`; the shape is restored
//! from the configuration on load.

use std::fs;
use std::path::Path;

use super::uemf::{decode_uemf, encode_uemf, parse_header, Dtype, HEADER_LEN};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::UemModel;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"UEMC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Parameter(format!("{v} does not fit a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &UemModel, config: &RunConfig) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    push_u32(&mut out, CHECKPOINT_VERSION as usize)?;
    let text = config.to_text();
    push_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    push_u32(&mut out, model.params.len())?;
    for (name, value) in model.params.iter() {
        push_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        let last = value.shape().last().copied().unwrap_or(1);
        let rows = if last == 0 { 0 } else { value.numel() / last };
        out.extend(encode_uemf(&value.reshape([rows, last])?, Dtype::F64)?);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: (self.at + n) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Manifest(format!("{}: checkpoint text is not UTF-8", self.path.display())))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(UemModel, RunConfig)> {
    let mut r = Reader { bytes, at: 0, path };
    let magic = r.take(4).map_err(|_| Error::BadMagic {
        path: path.to_path_buf(),
        found: [0; 4],
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic.try_into().expect("4 bytes"),
        });
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let config = RunConfig::parse(&r.string()?)?;
    let template = UemModel::new(config.model.clone(), 0)?;
    let count = r.u32()?;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let header = parse_header(&bytes[r.at..], path)?;
        let blob = r.take(HEADER_LEN + header.payload_len() as usize)?;
        let flat = decode_uemf(blob, path)?;
        let shape = template
            .params
            .by_name(&name)
            .map(|t| t.shape().to_vec())
            .ok_or_else(|| Error::Parameter(format!("checkpoint holds unknown parameter {name:?}")))?;
        named.push((name, flat.reshape(shape)?));
    }
    if r.at != bytes.len() {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: (bytes.len() - r.at) as u64,
        });
    }
    Ok((UemModel::from_named(config.model.clone(), named)?, config))
}

pub fn save_checkpoint(path: &Path, model: &UemModel, config: &RunConfig) -> Result<()> {
    let bytes = encode_checkpoint(model, config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(UemModel, RunConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
