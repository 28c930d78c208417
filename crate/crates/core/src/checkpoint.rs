//! Parameter checkpoints: named arrays with shape headers, stored as 32-bit
//! little-endian floats, plus free-form string metadata.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic "NWCK" | version u16
//! meta_count u16 | per entry: key u16-len + bytes, value u16-len + bytes
//! array_count u32 | per array: name u16-len + bytes, rows u32, cols u32,
//!                   rows*cols f32 values
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::diffgraph::{sc, ParamId, ParamStore, Scalar};
use crate::error::{CodecError, Result};

pub const MAGIC: &[u8; 4] = b"NWCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, Array2<f32>)>,
}

fn write_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    if s.len() > u16::MAX as usize {
        return Err(CodecError::InvalidInput("checkpoint string too long".into()));
    }
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::Bitstream(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CodecError::Bitstream("checkpoint string is not UTF-8".into()))
    }
}

impl Checkpoint {
    /// Snapshot every parameter in the store (cast to f32).
    pub fn from_store<S: Scalar>(store: &ParamStore<S>, meta: BTreeMap<String, String>) -> Self {
        let arrays = (0..store.len())
            .map(|i| {
                let id = ParamId(i);
                let v = store.value(id).mapv(|x| Scalar::to_f64(x) as f32);
                (store.name(id).to_string(), v)
            })
            .collect();
        Checkpoint { meta, arrays }
    }

    /// Copy arrays into an already-registered store, matching by name.
    /// Every store parameter must be present with the right shape.
    pub fn apply_to_store<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        for (name, values) in &self.arrays {
            let id = store.id_of(name).ok_or_else(|| {
                CodecError::Bitstream(format!("checkpoint contains unknown parameter {}", name))
            })?;
            if store.value(id).dim() != values.dim() {
                return Err(CodecError::Bitstream(format!(
                    "checkpoint shape {:?} for {} does not match model {:?}",
                    values.dim(),
                    name,
                    store.value(id).dim()
                )));
            }
            store
                .value_mut(id)
                .assign(&values.mapv(|x| sc::<S>(x as f64)));
        }
        for i in 0..store.len() {
            let name = store.name(ParamId(i));
            if !self.arrays.iter().any(|(n, _)| n == name) {
                return Err(CodecError::Bitstream(format!(
                    "checkpoint is missing parameter {}",
                    name
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        if self.meta.len() > u16::MAX as usize {
            return Err(CodecError::InvalidInput("too many metadata entries".into()));
        }
        out.extend_from_slice(&(self.meta.len() as u16).to_le_bytes());
        for (k, v) in &self.meta {
            write_str(&mut out, k)?;
            write_str(&mut out, v)?;
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, a) in &self.arrays {
            write_str(&mut out, name)?;
            out.extend_from_slice(&(a.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(a.ncols() as u32).to_le_bytes());
            for &v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { buf: bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(CodecError::Bitstream("bad magic (not a checkpoint)".into()));
        }
        let version = c.u16()?;
        if version != VERSION {
            return Err(CodecError::Bitstream(format!("unsupported checkpoint version {}", version)));
        }
        let meta_count = c.u16()? as usize;
        let mut meta = BTreeMap::new();
        for _ in 0..meta_count {
            let k = c.string()?;
            let v = c.string()?;
            meta.insert(k, v);
        }
        let array_count = c.u32()? as usize;
        let mut arrays = Vec::with_capacity(array_count);
        for _ in 0..array_count {
            let name = c.string()?;
            let rows = c.u32()? as usize;
            let cols = c.u32()? as usize;
            let raw = c.take(rows * cols * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let a = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| CodecError::Bitstream(format!("bad array shape: {}", e)))?;
            arrays.push((name, a));
        }
        if c.pos != bytes.len() {
            return Err(CodecError::Bitstream("trailing bytes after checkpoint end".into()));
        }
        Ok(Checkpoint { meta, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
