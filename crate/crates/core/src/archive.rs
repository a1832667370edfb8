//! Versioned binary tensor archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"CCFA"
//! u32    format version (1)
//! u32    tensor count
//! repeat:
//!   u32  name length, name bytes (UTF-8)
//!   u8   element type: 0 = f64, 1 = f32
//!   u32  rows, u32 cols
//!   rows * cols values, row-major
//! ```
//!
//! Tensors are held as `f64` in memory; `f32` entries must hold values that
//! are exactly representable in single precision.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CCFA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F64 = 0,
    F32 = 1,
}

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    entries: Vec<(String, Array2<f64>)>,
    single: Vec<bool>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.entries.push((name.into(), value));
        self.single.push(false);
    }

    /// Stored in single precision on disk.
    pub fn push_f32(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.entries.push((name.into(), value));
        self.single.push(true);
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = (String, Array2<f64>)>) {
        for (n, t) in items {
            self.push(n, t);
        }
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.push(name, Array2::from_elem((1, 1), v));
    }

    /// Stores `u64` words exactly as two 32-bit halves per entry.
    pub fn push_words(&mut self, name: impl Into<String>, words: &[u64]) {
        let data: Vec<f64> = words
            .iter()
            .flat_map(|w| [(w >> 32) as f64, (w & 0xffff_ffff) as f64])
            .collect();
        let n = data.len();
        self.push(name, Array2::from_shape_vec((1, n), data).expect("row vector"));
    }

    pub fn words(&self, name: &str) -> Result<Vec<u64>> {
        let t = self.require(name)?;
        Ok(t.iter()
            .collect::<Vec<_>>()
            .chunks(2)
            .map(|c| ((*c[0] as u64) << 32) | (*c[1] as u64))
            .collect())
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Array2<f64>> {
        self.get(name).ok_or_else(|| Error::Archive(format!("missing tensor {name}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.require(name)?[[0, 0]])
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

    /// `(rows, cols)` per tensor, for manifests.
    pub fn shapes(&self) -> BTreeMap<String, [usize; 2]> {
        self.entries.iter().map(|(n, t)| (n.clone(), [t.nrows(), t.ncols()])).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for ((name, t), &single) in self.entries.iter().zip(&self.single) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[if single { Dtype::F32 } else { Dtype::F64 } as u8])?;
            w.write_all(&(t.nrows() as u32).to_le_bytes())?;
            w.write_all(&(t.ncols() as u32).to_le_bytes())?;
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.iter() {
                if single {
                    buf.extend_from_slice(&(*v as f32).to_le_bytes());
                } else {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn u32_of<R: Read>(r: &mut R) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Archive("bad magic".into()));
        }
        let version = u32_of(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Archive(format!("unsupported format version {version}")));
        }
        let count = u32_of(&mut r)? as usize;
        let mut out = Self::new();
        for _ in 0..count {
            let len = u32_of(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Archive(e.to_string()))?;
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype)?;
            let single = match dtype[0] {
                0 => false,
                1 => true,
                other => return Err(Error::Archive(format!("unknown element type {other}"))),
            };
            let rows = u32_of(&mut r)? as usize;
            let cols = u32_of(&mut r)? as usize;
            let width = if single { 4 } else { 8 };
            let mut raw = vec![0u8; rows * cols * width];
            r.read_exact(&mut raw)?;
            let data: Vec<f64> = if single {
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64).collect()
            } else {
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
            };
            let t = Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Archive(e.to_string()))?;
            if single {
                out.push_f32(name, t);
            } else {
                out.push(name, t);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(any::<f64>(), 1..40), cols in 1usize..5, words in proptest::collection::vec(any::<u64>(), 0..6)) {
            let rows = values.len() / cols;
            prop_assume!(rows > 0);
            let t = Array2::from_shape_vec((rows, cols), values[..rows * cols].to_vec()).unwrap();
            let mut a = Archive::new();
            a.push("t", t.clone());
            a.push_words("w", &words);
            let half = t.mapv(|v| v as f32 as f64);
            a.push_f32("h", half.clone());
            let mut buf = Vec::new();
            a.write_to(&mut buf).unwrap();
            let back = Archive::read_from(&buf[..]).unwrap();
            let got = back.get("t").unwrap();
            prop_assert_eq!(got.dim(), t.dim());
            for (x, y) in got.iter().zip(t.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(back.words("w").unwrap(), words);
            for (x, y) in back.get("h").unwrap().iter().zip(half.iter()) {
                prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(Archive::read_from(&b"NOPE\x01\0\0\0"[..]), Err(Error::Archive(_))));
    }
}
