//! Little-endian binary container holding a JSON config blob plus named
//! tensors. Used both for model checkpoints and per-utterance feature caches.
//!
//! Layout: magic `CCAT`, u32 version, u32 config length, config JSON bytes,
//! u32 tensor count, then per tensor: u16 name length, name bytes, u8 dtype
//! (0 = f32, 1 = u8), u8 ndim, u32 dims, raw values. No alignment padding.

use std::fs;
use std::path::Path;

use crate::error::{CcatError, Result};

pub const MAGIC: [u8; 4] = *b"CCAT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    U8 = 1,
}

impl DType {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(DType::F32),
            1 => Ok(DType::U8),
            other => Err(CcatError::CorruptCheckpoint(format!(
                "unknown dtype byte {other}"
            ))),
        }
    }

    fn elem_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

/// One stored tensor.
#[derive(Clone, Debug)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u32>,
    pub bytes: Vec<u8>,
}

impl NamedTensor {
    pub fn from_f32(name: impl Into<String>, dims: &[u32], values: &[f32]) -> Self {
        let expected: u64 = dims.iter().map(|&d| d as u64).product();
        assert_eq!(expected as usize, values.len(), "dims do not match values");
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        NamedTensor {
            name: name.into(),
            dtype: DType::F32,
            dims: dims.to_vec(),
            bytes,
        }
    }

    pub fn from_u8(name: impl Into<String>, dims: &[u32], values: &[u8]) -> Self {
        let expected: u64 = dims.iter().map(|&d| d as u64).product();
        assert_eq!(expected as usize, values.len(), "dims do not match values");
        NamedTensor {
            name: name.into(),
            dtype: DType::U8,
            dims: dims.to_vec(),
            bytes: values.to_vec(),
        }
    }

    pub fn as_f32_vec(&self) -> Result<Vec<f32>> {
        if self.dtype != DType::F32 {
            return Err(CcatError::CorruptCheckpoint(format!(
                "tensor {} is not f32",
                self.name
            )));
        }
        Ok(self
            .bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn elem_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

/// Serialize a container to bytes.
pub fn encode(config_json: &str, tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(config_json.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dtype as u8);
        out.push(t.dims.len() as u8);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&t.bytes);
    }
    out
}

pub fn write_container(path: &Path, config_json: &str, tensors: &[NamedTensor]) -> Result<()> {
    fs::write(path, encode(config_json, tensors))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CcatError::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {} more)",
                self.pos, n
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse a container from bytes.
pub fn decode(bytes: &[u8]) -> Result<(String, Vec<NamedTensor>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4).map_err(|_| {
        CcatError::Format("file too short for container header".into())
    })?;
    if magic != MAGIC {
        return Err(CcatError::Format(format!("bad magic {:?}", magic)));
    }
    let version = cur
        .u32()
        .map_err(|_| CcatError::Format("missing version".into()))?;
    if version != VERSION {
        return Err(CcatError::Format(format!(
            "unsupported container version {version}"
        )));
    }
    let json_len = cur.u32()? as usize;
    let json = std::str::from_utf8(cur.take(json_len)?)
        .map_err(|_| CcatError::CorruptCheckpoint("config is not UTF-8".into()))?
        .to_string();
    let count = cur.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| CcatError::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = DType::from_byte(cur.u8()?)?;
        let ndim = cur.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u32()?);
        }
        let elems: u64 = dims.iter().map(|&d| d as u64).product();
        let bytes = cur.take(elems as usize * dtype.elem_size())?.to_vec();
        tensors.push(NamedTensor {
            name,
            dtype,
            dims,
            bytes,
        });
    }
    if cur.pos != bytes.len() {
        return Err(CcatError::CorruptCheckpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - cur.pos
        )));
    }
    Ok((json, tensors))
}

pub fn read_container(path: &Path) -> Result<(String, Vec<NamedTensor>)> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}
