//! `MNW1` weight files: a flat, ordered list of named f32 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MNW1" | version u32 | count u32
//! per tensor: name_len u16 | name utf-8 | rank u8 | dims u32 × rank | dtype u8 (0 = f32) | payload f32 × Π dims
//! crc32 u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MNW1";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Bytes taken by the fixed header plus the trailing checksum.
pub const OVERHEAD_BYTES: usize = 4 + 4 + 4 + 4;

/// Ordered, uniquely named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightFile {
    entries: Vec<(String, Tensor<f32>)>,
}

/// Size in bytes of one serialized entry.
pub fn entry_bytes(name: &str, shape: &[usize]) -> usize {
    2 + name.len() + 1 + 4 * shape.len() + 1 + 4 * shape.iter().product::<usize>()
}

impl WeightFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            bail!(Format, "tensor name too long ({} bytes)", name.len());
        }
        if self.get(&name).is_some() {
            bail!(Format, "duplicate tensor name {name:?}");
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Looks up a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor<f32>> {
        let Some(t) = self.get(name) else {
            bail!(Structural, "missing tensor {name:?}");
        };
        if t.shape() != shape {
            bail!(Structural, "tensor {name:?} has shape {:?}, expected {shape:?}", t.shape());
        }
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Moves every entry of `other` into `self`, rejecting duplicates.
    pub fn extend(&mut self, other: WeightFile) -> Result<()> {
        for (n, t) in other.entries {
            self.insert(n, t)?;
        }
        Ok(())
    }

    pub fn serialized_len(&self) -> usize {
        OVERHEAD_BYTES + self.entries.iter().map(|(n, t)| entry_bytes(n, t.shape())).sum::<usize>()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            if t.rank() > u8::MAX as usize {
                bail!(Format, "tensor {name:?} has rank {}", t.rank());
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.push(DTYPE_F32);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < OVERHEAD_BYTES {
            bail!(Format, "weight file truncated ({} bytes)", bytes.len());
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if &body[..4] != MAGIC {
            bail!(Format, "bad magic {:?}", &body[..4]);
        }
        let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            bail!(Format, "crc mismatch");
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            bail!(Format, "unsupported version {version}");
        }
        let count = r.u32()?;
        let mut file = WeightFile::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not utf-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut len: usize = 1;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                len = len.checked_mul(d).ok_or_else(|| Error::Format(format!("shape overflow in {name:?}")))?;
                shape.push(d);
            }
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                bail!(Format, "tensor {name:?} has unsupported dtype {dtype}");
            }
            let nbytes = len.checked_mul(4).ok_or_else(|| Error::Format(format!("shape overflow in {name:?}")))?;
            let payload = r.take(nbytes)?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("tensor {name:?}: {e}")))?;
            file.insert(name, t)?;
        }
        if r.pos != body.len() {
            bail!(Format, "{} trailing bytes before checksum", body.len() - r.pos);
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            bail!(Format, "weight file truncated");
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
