//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `TLENSCK1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every section's `f64` values in little-endian
//! order, in header order.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TLENSCK1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    step: usize,
    meta: serde_json::Value,
    sections: Vec<SectionInfo>,
}

/// Named `f64` arrays plus free-form JSON metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub meta: serde_json::Value,
    sections: Vec<(SectionInfo, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(step: usize, meta: serde_json::Value) -> Self {
        Checkpoint {
            step,
            meta,
            sections: Vec::new(),
        }
    }

    pub fn sections(&self) -> impl Iterator<Item = &SectionInfo> {
        self.sections.iter().map(|(s, _)| s)
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        if self.sections.iter().any(|(s, _)| s.name == name) {
            return Err(Error::Checkpoint(format!("duplicate section '{name}'")));
        }
        self.sections.push((
            SectionInfo {
                name: name.into(),
                shape: shape.to_vec(),
            },
            data,
        ));
        Ok(())
    }

    pub fn push_vec(&mut self, name: &str, data: &[f64]) -> Result<()> {
        self.push(name, &[data.len()], data.to_vec())
    }

    pub fn push_matrix(&mut self, name: &str, m: &Array2<f64>) -> Result<()> {
        let (r, c) = m.dim();
        self.push(name, &[r, c], m.iter().copied().collect())
    }

    pub fn has(&self, name: &str) -> bool {
        self.sections.iter().any(|(s, _)| s.name == name)
    }

    pub fn get(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.sections
            .iter()
            .find(|(s, _)| s.name == name)
            .map(|(s, d)| (s.shape.as_slice(), d.as_slice()))
            .ok_or_else(|| Error::Checkpoint(format!("missing section '{name}'")))
    }

    pub fn get_vec(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.1.to_vec())
    }

    pub fn get_matrix(&self, name: &str) -> Result<Array2<f64>> {
        let (shape, data) = self.get(name)?;
        if shape.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "section '{name}' is not a matrix"
            )));
        }
        Array2::from_shape_vec((shape[0], shape[1]), data.to_vec())
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: VERSION,
            step: self.step,
            meta: self.meta.clone(),
            sections: self.sections.iter().map(|(s, _)| s.clone()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.sections.iter().map(|(_, d)| d.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(&json);
        for (_, d) in &self.sections {
            for v in d {
                out.extend(v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                header.version
            )));
        }
        let mut at = 16 + hlen;
        let mut sections = Vec::with_capacity(header.sections.len());
        for info in header.sections {
            let len: usize = info.shape.iter().product();
            let raw = bytes.get(at..at + len * 8).ok_or_else(|| {
                Error::Checkpoint(format!("section '{}' is truncated", info.name))
            })?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            at += len * 8;
            sections.push((info, data));
        }
        if at != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - at
            )));
        }
        Ok(Checkpoint {
            step: header.step,
            meta: header.meta,
            sections,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
