//! Binary checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "TNDCKPT\0" | version u32 | metadata length u64 | metadata (JSON)
//! entry count u64 | entries...
//! entry: name length u32 | name (UTF-8) | rows u64 | cols u64 | rows*cols f64
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::NnError;

pub const MAGIC: &[u8; 8] = b"TNDCKPT\0";
pub const VERSION: u32 = 1;

/// Named tensors plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    /// Adds every parameter value of `store`, prefixing names.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.push(format!("{prefix}{}", p.name), p.value.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn index(&self) -> BTreeMap<&str, &Tensor> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t)).collect()
    }

    /// Copies values into `store`; every parameter must be present with a
    /// matching shape.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<(), NnError> {
        let index = self.index();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("{prefix}{}", store.name(id));
            let t = index
                .get(name.as_str())
                .ok_or_else(|| NnError::Checkpoint(format!("missing parameter {name}")))?;
            store.set_value(id, (*t).clone())?;
        }
        Ok(())
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), NnError> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        out.write_all(&(meta.len() as u64).to_le_bytes())?;
        out.write_all(&meta)?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, t) in &self.entries {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.rows() as u64).to_le_bytes())?;
            out.write_all(&(t.cols() as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self, NnError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Checkpoint("not a checkpoint file (bad magic)".to_string()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let meta_len = r.u64()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| NnError::Checkpoint(format!("metadata: {e}")))?;
        let count = r.u64()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| NnError::Checkpoint("entry name is not UTF-8".to_string()))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some())
                .ok_or_else(|| NnError::Checkpoint(format!("entry {name} has an absurd shape")))?;
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            entries.push((name, Tensor::new(rows, cols, data)?));
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes after last entry".to_string()));
        }
        Ok(Self { metadata, entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new(serde_json::json!({"obs_dim": 25}));
        c.push("a.weight", Tensor::new(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap());
        c.push("b", Tensor::scalar(7.0));
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn truncation_and_magic_detected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let err = Checkpoint::read_from(&buf[..buf.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        buf[0] = b'X';
        assert!(Checkpoint::read_from(buf.as_slice()).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn load_into_store_checks_shapes() {
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::zeros(2, 3));
        let err = sample().load_store("", &mut store).unwrap_err();
        assert_eq!(
            err.to_string(),
            "parameter a.weight: expected shape (2, 3), found (2, 2)"
        );
    }
}
