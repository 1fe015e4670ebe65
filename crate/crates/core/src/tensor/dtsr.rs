//! `DTSR` v1 tensor files.
//!
//! Layout: magic `DTSR`, `u8` version (1), `u8` dtype (0 = f64, 1 = f32),
//! `u8` rank, `rank` little-endian `u32` dims, then the row-major payload in
//! little-endian order.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DTSR";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64 = 0,
    F32 = 1,
}

impl DType {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(DType::F64),
            1 => Ok(DType::F32),
            other => Err(Error::Parse(format!("unknown DTSR dtype {other}"))),
        }
    }
}

pub fn encode(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank()).map_err(|_| Error::Range(format!("rank {} exceeds 255", t.rank())))?;
    let width = match dtype {
        DType::F64 => 8,
        DType::F32 => 4,
    };
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + width * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype as u8);
    out.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Range(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        DType::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
    }
    Ok(out)
}

/// Decodes a tensor; f32 payloads are widened to f64. Trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<(Tensor, DType)> {
    let mut cur = bytes;
    let (t, dtype) = read_from(&mut cur)?;
    if !cur.is_empty() {
        return Err(Error::Parse(format!("{} trailing bytes after DTSR payload", cur.len())));
    }
    Ok((t, dtype))
}

pub fn write_to<W: Write>(w: &mut W, t: &Tensor, dtype: DType) -> std::io::Result<()> {
    let bytes = encode(t, dtype).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    w.write_all(&bytes)
}

pub fn read_from<R: Read>(r: &mut R) -> Result<(Tensor, DType)> {
    let short = |e: std::io::Error| Error::Parse(format!("truncated DTSR stream: {e}"));
    let mut head = [0u8; 7];
    r.read_exact(&mut head).map_err(short)?;
    if &head[..4] != MAGIC {
        return Err(Error::Parse("bad DTSR magic".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Parse(format!("unsupported DTSR version {}", head[4])));
    }
    let dtype = DType::from_byte(head[5])?;
    let rank = head[6] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(short)?;
        shape.push(u32::from_le_bytes(b) as usize);
    }
    let numel: usize = shape.iter().product();
    let data = match dtype {
        DType::F64 => {
            let mut buf = vec![0u8; numel * 8];
            r.read_exact(&mut buf).map_err(short)?;
            buf.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        }
        DType::F32 => {
            let mut buf = vec![0u8; numel * 4];
            r.read_exact(&mut buf).map_err(short)?;
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect()
        }
    };
    let t = Tensor::new(shape, data).map_err(|e| Error::Parse(format!("invalid DTSR tensor: {e}")))?;
    Ok((t, dtype))
}

pub fn save(path: impl AsRef<std::path::Path>, t: &Tensor, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t, dtype)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<std::path::Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map(|(t, _)| t)
}
