//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NKCK" | u32 version | u64 seed
//! u32 n_meta  { u32 len, key bytes, u32 len, value bytes }*
//! u32 n_param { u32 len, name bytes, u8 dtype (1 = f64), u32 ndim, u64 dims*, f64 values* }*
//! 32-byte SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NKCK";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// Free-form string metadata stored alongside the parameters.
pub type Metadata = BTreeMap<String, String>;

pub fn encode(store: &ParamStore, meta: &Metadata) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&store.seed().to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    for (k, v) in meta {
        put_str(&mut out, k);
        put_str(&mut out, v);
    }
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        put_str(&mut out, name);
        out.push(DTYPE_F64);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NumError::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| NumError::Checkpoint("invalid utf-8 in name".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, Metadata)> {
    if bytes.len() < 32 + 4 {
        return Err(NumError::Checkpoint("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(NumError::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NumError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(NumError::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let seed = r.u64()?;
    let mut meta = Metadata::new();
    for _ in 0..r.u32()? {
        let k = r.string()?;
        let v = r.string()?;
        meta.insert(k, v);
    }
    let mut store = ParamStore::new(seed);
    for _ in 0..r.u32()? {
        let name = r.string()?;
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F64 {
            return Err(NumError::Checkpoint(format!("unknown dtype {dtype}")));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != body.len() {
        return Err(NumError::Checkpoint("trailing bytes".into()));
    }
    Ok((store, meta))
}

pub fn save(store: &ParamStore, meta: &Metadata, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(store, meta))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, Metadata)> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            vals in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40),
            seed in any::<u64>(),
        ) {
            let mut s = ParamStore::new(seed);
            s.insert("b", Tensor::new(vec![vals.len()], vals.clone()).unwrap()).unwrap();
            s.insert("a.w", Tensor::zeros(vec![2, 0])).unwrap();
            let mut meta = Metadata::new();
            meta.insert("phase".into(), "1".into());
            let bytes = encode(&s, &meta);
            let (back, m2) = decode(&bytes).unwrap();
            prop_assert_eq!(back.seed(), seed);
            prop_assert_eq!(&m2, &meta);
            prop_assert_eq!(encode(&back, &m2), bytes);
            for (a, b) in back.get("b").unwrap().data().iter().zip(&vals) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut s = ParamStore::new(1);
        s.insert("w", Tensor::full(vec![3], 2.0)).unwrap();
        let mut bytes = encode(&s, &Metadata::new());
        bytes[20] ^= 1;
        assert!(decode(&bytes).is_err());
        assert!(decode(&bytes[..10]).is_err());
    }
}
