//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"EBMCL1"  u32 count
//! repeated count times:
//!   u32 name_len  name (UTF-8)  u32 ndim  u64 dims[ndim]  f64 values[prod(dims)]
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"EBMCL1";

pub fn write_tensors<W: Write>(mut w: W, tensors: &BTreeMap<String, Tensor>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                line: 0,
                detail: format!("checkpoint truncated at byte {}", self.pos),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<BTreeMap<String, Tensor>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)
        .map_err(|e| Error::io("<checkpoint stream>", e))?;
    decode(&buf)
}

fn decode(buf: &[u8]) -> Result<BTreeMap<String, Tensor>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(Error::Parse {
            line: 0,
            detail: "missing EBMCL1 header".into(),
        });
    }
    let count = c.u32()?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|e| Error::Parse {
                line: 0,
                detail: format!("parameter name is not UTF-8: {e}"),
            })?
            .to_string();
        let ndim = c.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = c
            .take(n * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| e.context(format!("parameter `{name}`")))?;
        if out.insert(name.clone(), t).is_some() {
            return Err(Error::Parse {
                line: 0,
                detail: format!("duplicate parameter `{name}`"),
            });
        }
    }
    if c.pos != buf.len() {
        return Err(Error::Parse {
            line: 0,
            detail: "trailing bytes after last parameter".into(),
        });
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut bytes = Vec::new();
    write_tensors(&mut bytes, tensors).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| e.context(format!("reading {}", path.display())))
}
