//! Named-tensor archive.
//!
//! Layout (little-endian): magic `H2GC`, u32 version, u8 element width
//! (4 or 8), u32 header length, JSON header, u32 tensor count, then per
//! tensor a u32 name length, the UTF-8 name, u64 rows, u64 cols and the
//! raw payload. A trailing SHA-256 digest covers every preceding byte.

use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{Dtype, Real};
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"H2GC";
const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Archive<T> {
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Array2<T>)>,
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated archive".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Element type of an archive file, read from its preamble.
pub fn archive_dtype(path: &Path) -> Result<Dtype> {
    use std::io::Read as _;
    let mut pre = [0u8; 9];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut pre))
        .map_err(|e| Error::io(path, e))?;
    if &pre[..4] != ARCHIVE_MAGIC {
        return Err(Error::Checkpoint("magic mismatch".into()));
    }
    match pre[8] {
        4 => Ok(Dtype::F32),
        8 => Ok(Dtype::F64),
        w => Err(Error::Checkpoint(format!("unsupported element width {w}"))),
    }
}

impl<T: Real> Archive<T> {
    pub fn get(&self, name: &str) -> Option<&Array2<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(ARCHIVE_MAGIC);
        out.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        out.push(T::DTYPE.bytes() as u8);
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
            for &x in t.iter() {
                x.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 1 + 32 || &bytes[..4] != ARCHIVE_MAGIC {
            return Err(Error::Checkpoint("magic mismatch".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("manifest hash mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != ARCHIVE_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let width = r.take(1)?[0] as usize;
        if width != T::DTYPE.bytes() {
            let found = if width == 4 { Dtype::F32 } else { Dtype::F64 };
            return Err(Error::Checkpoint(format!(
                "archive stores {found:?} tensors, expected {:?}",
                T::DTYPE
            )));
        }
        let hlen = r.u32()? as usize;
        let header: serde_json::Value = serde_json::from_slice(r.take(hlen)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let payload = r.take(rows * cols * width)?;
            let values: Vec<T> = payload.chunks_exact(width).map(T::read_le).collect();
            let t = Array2::from_shape_vec((rows, cols), values).expect("sized");
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Archive { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
