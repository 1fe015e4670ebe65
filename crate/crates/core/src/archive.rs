//! Single-file archive of named entries.
//!
//! Layout: magic `DTAR`, `u8` version (1), `u32` LE entry count, then per
//! entry a `u16` LE name length, UTF-8 name, `u64` LE payload length and
//! the payload. Tensor entries hold `DTSR` bytes; text entries hold UTF-8.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::dtsr::{self, DType};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DTAR";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: Vec<(String, Vec<u8>)>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert_bytes(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        if self.get(name).is_some() {
            return Err(Error::Contract(format!("duplicate archive entry `{name}`")));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::Range(format!("entry name of {} bytes", name.len())));
        }
        self.entries.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.insert_bytes(name, dtsr::encode(t, DType::F64)?)
    }

    pub fn insert_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.insert_bytes(name, text.as_bytes().to_vec())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let bytes = self.get(name).ok_or_else(|| Error::Lookup {
            kind: "archive entry",
            name: name.to_string(),
        })?;
        dtsr::decode(bytes).map(|(t, _)| t)
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let bytes = self.get(name).ok_or_else(|| Error::Lookup {
            kind: "archive entry",
            name: name.to_string(),
        })?;
        String::from_utf8(bytes.to_vec()).map_err(|e| Error::Parse(format!("entry `{name}`: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, bytes) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Parse("bad archive magic".into()));
        }
        let version = cur.take(1)?[0];
        if version != VERSION {
            return Err(Error::Parse(format!("unsupported archive version {version}")));
        }
        let count = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        let mut archive = Archive::new();
        for _ in 0..count {
            let nlen = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(cur.take(nlen)?)
                .map_err(|e| Error::Parse(format!("archive entry name: {e}")))?
                .to_string();
            let plen = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
            let payload = cur.take(plen)?.to_vec();
            archive.insert_bytes(&name, payload)?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes after archive".into()));
        }
        Ok(archive)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Parse("truncated archive".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_mixed_entries() {
        let mut a = Archive::new();
        a.insert_tensor("w", &Tensor::from_fn(&[2, 2], |i| i as f64 * 0.5))
            .unwrap();
        a.insert_text("config", "seed=3\n").unwrap();
        let back = Archive::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.tensor("w").unwrap().data(), &[0.0, 0.5, 1.0, 1.5]);
        assert_eq!(back.text("config").unwrap(), "seed=3\n");
        assert!(matches!(back.tensor("missing"), Err(Error::Lookup { .. })));
    }

    #[test]
    fn rejects_duplicates_and_truncation() {
        let mut a = Archive::new();
        a.insert_text("x", "1").unwrap();
        assert!(a.insert_text("x", "2").is_err());
        let bytes = a.to_bytes();
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
