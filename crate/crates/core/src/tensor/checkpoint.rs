//! Binary checkpoint: `GSC1` magic, little-endian throughout.
//!
//! ```text
//! magic    [u8; 4]  "GSC1"
//! count    u32
//! repeated count times:
//!   name_len u16, name [u8; name_len] (UTF-8)
//!   rank     u8,  dims [u32; rank]
//!   values   [f64; product(dims)]
//! ```

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{GscError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSC1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

pub fn write_checkpoint<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for nt in tensors {
        let name = nt.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| GscError::Checkpoint(format!("name too long: {}", nt.name)))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name);
        let shape = nt.tensor.shape();
        let rank = u8::try_from(shape.len()).map_err(|_| GscError::Checkpoint("rank exceeds 255".into()))?;
        buf.push(rank);
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| GscError::Checkpoint("dimension exceeds u32".into()))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in nt.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| GscError::Checkpoint(e.to_string()))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(GscError::Checkpoint(format!("truncated at byte {}", self.pos)));
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| GscError::Checkpoint(e.to_string()))?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(GscError::Checkpoint("bad magic, expected GSC1".into()));
    }
    let count = cur.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| GscError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8()? as usize;
        let shape = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(shape, data).map_err(|e| GscError::Checkpoint(format!("{name}: {e}")))?;
        out.push(NamedTensor { name, tensor });
    }
    if cur.pos != buf.len() {
        return Err(GscError::Checkpoint(format!("{} trailing bytes", buf.len() - cur.pos)));
    }
    Ok(out)
}
