//! UEMF: a fixed little-endian matrix container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "UEMF"
//! 4       4     version (u32, = 1)
//! 8       4     rows (u32)
//! 12      4     cols (u32)
//! 16      1     dtype tag (1 = f32, 2 = f64)
//! 17      ...   rows * cols values, row-major
//! ```
//!
//! Feature files are written as f32. Checkpoints use the f64 tag so that
//! weights survive a save and load unchanged.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const UEMF_MAGIC: [u8; 4] = *b"UEMF";
pub const UEMF_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Self::F32 => 1,
            Self::F64 => 2,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Self::F32),
            2 => Some(Self::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UemfHeader {
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
}

impl UemfHeader {
    pub fn payload_len(&self) -> u64 {
        (self.rows as u64) * (self.cols as u64) * self.dtype.width() as u64
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses the fixed header. `bytes` may be longer than the header.
pub fn parse_header(bytes: &[u8], path: &Path) -> Result<UemfHeader> {
    // a cut-off magic is a short file, not a foreign one
    if bytes.len() < 4 && UEMF_MAGIC.starts_with(bytes) {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if bytes.len() < 4 || bytes[..4] != UEMF_MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u32_at(bytes, 4);
    if version != UEMF_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let dtype = Dtype::from_tag(bytes[16]).ok_or(Error::UnsupportedDtype {
        path: path.to_path_buf(),
        tag: bytes[16],
    })?;
    Ok(UemfHeader {
        rows: u32_at(bytes, 8) as usize,
        cols: u32_at(bytes, 12) as usize,
        dtype,
    })
}

/// Serializes a finite 2-D matrix.
pub fn encode_uemf(m: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    if m.rank() != 2 {
        return Err(Error::Shape {
            op: "encode_uemf",
            detail: format!("expected a matrix, got shape {:?}", m.shape()),
        });
    }
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let too_big = |n: usize| u32::try_from(n).is_err();
    if too_big(rows) || too_big(cols) {
        return Err(Error::Shape {
            op: "encode_uemf",
            detail: format!("{rows}x{cols} exceeds the u32 header fields"),
        });
    }
    if let Some(i) = m.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteData {
            path: "<memory>".into(),
            index: i,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + m.numel() * dtype.width());
    out.extend_from_slice(&UEMF_MAGIC);
    out.extend_from_slice(&UEMF_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.push(dtype.tag());
    match dtype {
        Dtype::F32 => {
            for &v in m.data() {
                let x = v as f32;
                if !x.is_finite() {
                    return Err(Error::Shape {
                        op: "encode_uemf",
                        detail: format!("value {v} overflows f32"),
                    });
                }
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Dtype::F64 => m.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

/// Parses a complete UEMF byte buffer, widening to f64.
pub fn decode_uemf(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let header = parse_header(bytes, path)?;
    let expected = header.payload_len();
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: found - expected,
        });
    }
    let payload = &bytes[HEADER_LEN..];
    let data: Vec<f64> = match header.dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteData {
            path: path.to_path_buf(),
            index,
        });
    }
    Tensor::new([header.rows, header.cols], data)
}

/// Writes an f32 feature file.
pub fn write_uemf(path: &Path, m: &Tensor) -> Result<()> {
    write_uemf_as(path, m, Dtype::F32)
}

pub fn write_uemf_as(path: &Path, m: &Tensor, dtype: Dtype) -> Result<()> {
    let bytes = encode_uemf(m, dtype).map_err(|e| match e {
        Error::NonFiniteData { index, .. } => Error::NonFiniteData {
            path: path.to_path_buf(),
            index,
        },
        other => other,
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_uemf(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_uemf(&bytes, path)
}

/// Reads and checks only the header, plus the file length against it.
pub fn read_uemf_header(path: &Path) -> Result<UemfHeader> {
    use std::io::Read;
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut head = Vec::with_capacity(HEADER_LEN);
    file.by_ref()
        .take(HEADER_LEN as u64)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    let header = parse_header(&head, path)?;
    let found = len - HEADER_LEN as u64;
    let expected = header.payload_len();
    if found < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(Error::TrailingBytes {
            path: path.to_path_buf(),
            extra: found - expected,
        });
    }
    Ok(header)
}
