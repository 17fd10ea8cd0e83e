//! Binary tensor container.
//!
//! ```text
//! tensor     := "DTNS" | version:u8 = 1 | dtype:u8 = 0 (f32) | ndim:u8 | dims:u32[ndim] | payload:f32[Πdims]
//! checkpoint := count:u32 | entry[count]
//! entry      := name_len:u16 | name:utf8[name_len] | tensor
//! ```
//!
//! All integers and floats are little-endian; payloads are row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{checked_numel, Tensor};

pub const MAGIC: &[u8; 4] = b"DTNS";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::format(0, format!("rank {} does not fit in a u8", t.ndim())));
    }
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::format(0, format!("dimension {d} does not fit in a u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(t.numel() * 4);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Cursor over a byte buffer that reports absolute offsets in its errors.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::format(
                    self.pos,
                    format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let start = self.pos;
        if self.take(4, "magic")? != MAGIC {
            return Err(Error::format(start, "bad magic, expected \"DTNS\""));
        }
        let at = self.pos;
        let version = self.u8("version")?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let at = self.pos;
        let dtype = self.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::format(at, format!("unsupported dtype {dtype}")));
        }
        let ndim = self.u8("ndim")? as usize;
        let dims_at = self.pos;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let at = self.pos;
            let d = self.u32("dimension")? as usize;
            if d == 0 {
                return Err(Error::format(at, "zero-sized dimension"));
            }
            shape.push(d);
        }
        let remaining = self.buf.len() - self.pos;
        let numel = checked_numel(&shape)
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| Error::format(dims_at, format!("dimensions {shape:?} overflow")))?;
        if numel * 4 > remaining {
            return Err(Error::format(
                self.pos,
                format!("truncated payload: {numel} floats need {} bytes, {remaining} left", numel * 4),
            ));
        }
        let payload = self.take(numel * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

pub fn encode_checkpoint(entries: &BTreeMap<String, Tensor>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let count = u32::try_from(entries.len()).map_err(|_| Error::format(0, "too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::format(out.len(), format!("entry name `{name}` longer than 65535 bytes")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out)?;
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let count = r.u32("entry count")?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "entry name")?)
            .map_err(|_| Error::format(at, "entry name is not UTF-8"))?
            .to_string();
        let t = r.tensor()?;
        if entries.insert(name.clone(), t).is_some() {
            return Err(Error::format(at, format!("duplicate entry `{name}`")));
        }
    }
    r.finish()?;
    Ok(entries)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary sibling and renames, so a failed write never
/// leaves a partial file behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    encode_tensor(t, &mut bytes)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&read(path.as_ref())?)
}

pub fn save_checkpoint(entries: &BTreeMap<String, Tensor>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(entries)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BTreeMap<String, Tensor>> {
    decode_checkpoint(&read(path.as_ref())?)
}
