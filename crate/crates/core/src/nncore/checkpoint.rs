//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    "FNTC"
//! version  u32
//! count    u32
//! count × record:
//!     name_len u32, name (utf-8)
//!     ndim     u32, dims (u64 × ndim)
//!     payload  f64 × product(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FNTC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends every parameter of `set` under `prefix/`.
    pub fn push_params(&mut self, prefix: &str, set: &impl ParamSet) {
        for (name, t) in set.param_names().into_iter().zip(set.params()) {
            self.entries.push((format!("{prefix}/{name}"), t.clone()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Copies matching entries into `set`. All names and shapes are checked
    /// before any parameter is written.
    pub fn restore_params(&self, prefix: &str, set: &mut impl ParamSet) -> Result<()> {
        let names = set.param_names();
        let mut found = Vec::with_capacity(names.len());
        for (name, current) in names.iter().zip(set.params()) {
            let key = format!("{prefix}/{name}");
            let t = self
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry `{key}`")))?;
            if t.shape() != current.shape() {
                return Err(Error::Checkpoint(format!(
                    "entry `{key}` has shape {:?}, expected {:?}",
                    t.shape(),
                    current.shape()
                )));
            }
            found.push(t);
        }
        for (dst, src) in set.params_mut().into_iter().zip(found) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not an FNTC checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint(format!("non-utf8 name at byte {}", r.pos)))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint("shape overflow".into()))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("shape overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
            entries.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last record",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { entries })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::dense::{Role, TransformParams};
    use crate::rng::rng_from_seed;

    fn model() -> TransformParams {
        TransformParams::init(Role::Analysis, &[4, 8, 3], &mut rng_from_seed(11)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let m = model();
        let mut ck = Checkpoint::new();
        ck.push_params("global", &m);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let mut restored = m.zeros_like();
        back.restore_params("global", &mut restored).unwrap();
        assert!(restored.bit_eq_params(&m));
    }

    #[test]
    fn truncated_file_is_rejected_cleanly() {
        let mut ck = Checkpoint::new();
        ck.push_params("g", &model());
        let bytes = ck.to_bytes();
        for cut in [3, 9, 20, bytes.len() - 1] {
            assert!(matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Checkpoint(_))
            ));
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut bytes = Checkpoint::new().to_bytes();
        bytes[4] = 9;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"));
    }

    #[test]
    fn shape_mismatch_rejected_without_partial_write() {
        let m = model();
        let mut ck = Checkpoint::new();
        ck.push_params("g", &m);
        let mut other =
            TransformParams::init(Role::Analysis, &[4, 8, 5], &mut rng_from_seed(1)).unwrap();
        let before = other.clone();
        assert!(ck.restore_params("g", &mut other).is_err());
        assert!(other.bit_eq_params(&before));
    }
}
