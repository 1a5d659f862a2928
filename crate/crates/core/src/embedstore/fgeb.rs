//! FGEB embedding tables.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "FGEB"
//! version u32      1
//! dim     u32
//! count   u64
//! count x { id_len u16, id utf-8[id_len], dim x f32 }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};
use crate::numcore::Vector;

pub const MAGIC: [u8; 4] = *b"FGEB";
pub const VERSION: u32 = 1;

/// Id-keyed table of fixed-dimension vectors for one modality.
///
/// Records are kept sorted by id, so a table's serialized form does not
/// depend on the order records were inserted or stored in a file.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vector>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::usage(format!("invalid table dimension {dim}")));
        }
        Ok(Self {
            dim,
            entries: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vector) -> Result<()> {
        let id = id.into();
        if id.is_empty() || id.len() > u16::MAX as usize {
            return Err(Error::usage(format!("invalid id length {}", id.len())));
        }
        Error::check_dim(self.dim, vector.dim())?;
        if self.entries.contains_key(&id) {
            return Err(Error::dataset(format!("duplicate id {id:?}")));
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Vector> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Vector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Copy with every vector scaled to unit length.
    pub fn l2_normalized(&self) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|(id, v)| {
                v.normalized()
                    .map(|n| (id.clone(), n))
                    .map_err(|_| Error::dataset(format!("zero-norm embedding {id:?}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dim: self.dim,
            entries,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (id, v) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(FormatError::Invalid("dimension 0".into()));
        }
        let count = r.u64()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            if len == 0 {
                return Err(FormatError::Invalid("empty id".into()));
            }
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| FormatError::Invalid("id is not utf-8".into()))?
                .to_owned();
            let payload = r.take(4 * dim)?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let vector = Vector::new(data)
                .map_err(|_| FormatError::Invalid(format!("non-finite value in {id:?}")))?;
            if entries.contains_key(&id) {
                return Err(FormatError::DuplicateId(id));
            }
            entries.insert(id, vector);
        }
        if r.pos != bytes.len() {
            return Err(FormatError::Trailing);
        }
        Ok(Self { dim, entries })
    }

    /// SHA-256 of the canonical serialized form, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

pub fn write_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, table.to_bytes())?;
    Ok(())
}

pub fn read_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    EmbeddingTable::from_bytes(&bytes).map_err(|e| Error::format(path, e))
}

pub(crate) struct Reader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let slice = self.bytes.get(self.pos..end).ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let raw = self.take(n.checked_mul(4).ok_or(FormatError::Truncated)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(dim: usize, rows: &[(&str, Vec<f32>)]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(dim).unwrap();
        for (id, v) in rows {
            t.insert(*id, Vector::new(v.clone()).unwrap()).unwrap();
        }
        t
    }

    #[test]
    fn round_trip_small_table() {
        let t = table(
            4,
            &[
                ("a", vec![1.0, 2.0, 3.0, 4.0]),
                ("b", vec![-0.0, 1e-30, f32::MAX, -7.5]),
                ("ç", vec![0.1, 0.2, 0.3, 0.4]),
            ],
        );
        let bytes = t.to_bytes();
        let back = EmbeddingTable::from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn empty_table_is_valid() {
        let t = EmbeddingTable::new(512).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 20);
        let back = EmbeddingTable::from_bytes(&bytes).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 512);
    }

    #[test]
    fn header_layout_is_exact() {
        let t = table(2, &[("xy", vec![1.0, -2.0])]);
        let mut expected = b"FGEB".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0, 0, 0]);
        expected.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0]);
        expected.extend_from_slice(b"xy");
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(t.to_bytes(), expected);
    }

    #[test]
    fn short_record_is_truncation() {
        let mut bytes = b"FGEB".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.push(b'a');
        for x in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        assert_eq!(EmbeddingTable::from_bytes(&bytes), Err(FormatError::Truncated));
    }

    #[test]
    fn distinct_load_errors() {
        let good = table(1, &[("a", vec![1.0])]).to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            EmbeddingTable::from_bytes(&bad_magic),
            Err(FormatError::BadMagic(_))
        ));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert_eq!(
            EmbeddingTable::from_bytes(&bad_version),
            Err(FormatError::Version(2))
        );

        let mut dup = table(1, &[("a", vec![1.0])]).to_bytes();
        dup[12] = 2;
        dup.extend_from_slice(&good[20..]);
        assert_eq!(
            EmbeddingTable::from_bytes(&dup),
            Err(FormatError::DuplicateId("a".into()))
        );

        let mut trailing = good.clone();
        trailing.push(0);
        assert_eq!(EmbeddingTable::from_bytes(&trailing), Err(FormatError::Trailing));
    }

    #[test]
    fn insert_enforces_invariants() {
        let mut t = EmbeddingTable::new(2).unwrap();
        assert!(t.insert("", Vector::zeros(2)).is_err());
        assert!(t.insert("a", Vector::zeros(3)).is_err());
        t.insert("a", Vector::zeros(2)).unwrap();
        assert!(t.insert("a", Vector::zeros(2)).is_err());
        assert!(EmbeddingTable::new(0).is_err());
    }

    #[test]
    fn normalization_rejects_zero_vectors() {
        let t = table(2, &[("a", vec![3.0, 4.0])]);
        let n = t.l2_normalized().unwrap();
        assert_eq!(n.get("a").unwrap().as_slice(), &[0.6, 0.8]);
        let z = table(2, &[("z", vec![0.0, 0.0])]);
        assert!(z.l2_normalized().is_err());
    }
}
