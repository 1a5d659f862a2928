//! Head checkpoints.
//!
//! Same conventions as FGEB tables (little-endian, `f32` payloads):
//!
//! ```text
//! magic "FGCK" | version u32 | kind u8 | dim u32 | hidden u32 | heads u32
//! meta_len u32 | meta utf-8 JSON
//! n_blocks u32 | n_blocks x { name_len u16, name, rows u32, cols u32, rows*cols x f32 }
//! has_adam u8  | [ step u64, lr f64, beta1 f64, beta2 f64, eps f64,
//!                  n_blocks x { len x f32 first moment, len x f32 second moment } ]
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamConfig, AdamState, TrainConfig};
use crate::embedstore::Reader;
use crate::error::{Error, FormatError, Result};
use crate::heads::{HeadKind, HeadParams, HeadShape};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Provenance stored with a trained head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub config: TrainConfig,
    pub epochs_done: usize,
    pub dataset_digest: String,
    /// Digest of the checkpoint training started from, if any.
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub inputs: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub head: HeadParams,
    pub adam: Option<AdamState>,
    pub record: Option<TrainingRecord>,
}

impl Checkpoint {
    pub fn new(head: HeadParams) -> Self {
        Self {
            head,
            adam: None,
            record: None,
        }
    }

    pub fn expect_kind(self, kind: HeadKind) -> Result<Self> {
        if self.head.kind() != kind {
            return Err(Error::KindMismatch {
                expected: kind.to_string(),
                found: self.head.kind().to_string(),
            });
        }
        Ok(self)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let shape = self.head.shape();
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(shape.kind.tag());
        for x in [shape.dim, shape.hidden, shape.heads] {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
        let meta = match &self.record {
            Some(r) => serde_json::to_vec(r)?,
            None => Vec::new(),
        };
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);

        let blocks = self.head.blocks();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for b in &blocks {
            out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.rows as u32).to_le_bytes());
            out.extend_from_slice(&(b.cols as u32).to_le_bytes());
            for x in b.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        match &self.adam {
            None => out.push(0),
            Some(state) => {
                if !state.matches(&self.head) {
                    return Err(Error::usage("optimizer state does not match the head"));
                }
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                let c = state.config;
                for x in [c.lr, c.beta1, c.beta2, c.eps] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                for (m, v) in state.first.iter().zip(&state.second) {
                    for x in m.iter().chain(v) {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::Version(version));
        }
        let tag = r.u8()?;
        let kind = HeadKind::from_tag(tag)
            .ok_or_else(|| FormatError::Invalid(format!("unknown head kind tag {tag}")))?;
        let shape = HeadShape {
            kind,
            dim: r.u32()? as usize,
            hidden: r.u32()? as usize,
            heads: r.u32()? as usize,
        };
        let meta_len = r.u32()? as usize;
        let meta = r.take(meta_len)?;
        let record = if meta.is_empty() {
            None
        } else {
            Some(
                serde_json::from_slice(meta)
                    .map_err(|e| FormatError::Invalid(format!("metadata: {e}")))?,
            )
        };

        let mut head = HeadParams::zeroed(shape).map_err(|e| FormatError::Invalid(e.to_string()))?;
        let expected: Vec<(&'static str, usize, usize)> =
            head.blocks().iter().map(|b| (b.name, b.rows, b.cols)).collect();
        let n_blocks = r.u32()? as usize;
        if n_blocks != expected.len() {
            return Err(FormatError::Invalid(format!(
                "{kind} expects {} parameter blocks, found {n_blocks}",
                expected.len()
            )));
        }
        let mut payloads = Vec::with_capacity(n_blocks);
        for &(name, rows, cols) in &expected {
            let len = r.u16()? as usize;
            let found = r.take(len)?;
            let (r_rows, r_cols) = (r.u32()? as usize, r.u32()? as usize);
            if found != name.as_bytes() || (r_rows, r_cols) != (rows, cols) {
                return Err(FormatError::Invalid(format!(
                    "block {:?} ({r_rows}x{r_cols}) where {name} ({rows}x{cols}) was expected",
                    String::from_utf8_lossy(found)
                )));
            }
            payloads.push(finite(r.f32s(rows * cols)?, name)?);
        }
        for (dst, src) in head.blocks_mut().into_iter().zip(&payloads) {
            dst.copy_from_slice(src);
        }

        let adam = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let config = AdamConfig {
                    lr: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let mut first = Vec::with_capacity(n_blocks);
                let mut second = Vec::with_capacity(n_blocks);
                for (p, &(name, _, _)) in payloads.iter().zip(&expected) {
                    first.push(finite(r.f32s(p.len())?, name)?);
                    second.push(finite(r.f32s(p.len())?, name)?);
                }
                Some(AdamState {
                    config,
                    step,
                    first,
                    second,
                })
            }
            flag => return Err(FormatError::Invalid(format!("optimizer flag {flag}"))),
        };
        if r.pos != bytes.len() {
            return Err(FormatError::Trailing);
        }
        Ok(Self { head, adam, record })
    }
}

fn finite(data: Vec<f32>, name: &str) -> Result<Vec<f32>, FormatError> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(data)
    } else {
        Err(FormatError::Invalid(format!("non-finite value in {name}")))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes).map_err(|e| Error::format(path, e))
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}
