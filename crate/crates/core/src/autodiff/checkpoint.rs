//! Flat binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "GMTC"
//! version      u16      currently 1
//! dtype        u8       1 = f32, 2 = f64
//! reserved     u8       0
//! count        u32      number of parameters
//! count × {
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   ndim       u32
//!   dims       ndim × u64
//!   data       prod(dims) × dtype.size() bytes, row-major, little-endian
//! }
//! ```
//!
//! Trainable flags and gradients are not stored.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"GMTC";
pub const VERSION: u16 = 1;

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_elements() * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE as u8);
    out.push(0);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let code = r.take(2)?[0];
    let dtype = DType::from_code(code)
        .ok_or_else(|| Error::Checkpoint(format!("unknown element type {code}")))?;
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {dtype:?}, requested {:?}",
            T::DTYPE
        )));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|e| Error::Checkpoint(format!("parameter name: {e}")))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * dtype.size())?;
        let data = raw.chunks_exact(dtype.size()).map(T::read_le).collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        if store.contains(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter '{name}'")));
        }
        store.insert(&name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store_from(values: &[Vec<f32>]) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        for (i, v) in values.iter().enumerate() {
            s.insert(
                &format!("p{i}.w"),
                Tensor::new(&[v.len()], v.clone()).unwrap(),
            );
        }
        s
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(values in prop::collection::vec(
            prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..20), 0..6)) {
            let s = store_from(&values);
            let back: ParamStore<f32> = decode(&encode(&s)).unwrap();
            prop_assert!(back.values_equal(&s, ""));
            prop_assert!(back.same_layout(&s));
        }
    }

    #[test]
    fn header_fields() {
        let s = store_from(&[vec![1.0, 2.0]]);
        let b = encode(&s);
        assert_eq!(&b[..4], b"GMTC");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(b[6], 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let s = store_from(&[vec![1.0, 2.0, 3.0]]);
        let b = encode(&s);
        assert!(decode::<f64>(&b).is_err());
        assert!(decode::<f32>(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode::<f32>(&bad).is_err());
    }
}
