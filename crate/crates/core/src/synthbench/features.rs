//! Per-anchor feature tables and their binary sidecar file.
//!
//! Sidecar layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes  "SALFEAT1"
//! feature_dim    u32
//! anchor_count   u32
//! scene_count    u32
//! per scene:
//!   id_len       u32
//!   image_id     id_len bytes, UTF-8
//!   features     anchor_count * feature_dim f32 (row-major, anchor-major)
//! ```

use std::collections::HashMap;
use std::path::Path;

use crate::io::write_atomic;

use super::SynthError;

const MAGIC: &[u8; 8] = b"SALFEAT1";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    feature_dim: usize,
    anchor_count: usize,
    ids: Vec<String>,
    tables: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    pub fn new(feature_dim: usize, anchor_count: usize) -> Self {
        Self {
            feature_dim,
            anchor_count,
            ids: Vec::new(),
            tables: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn anchor_count(&self) -> usize {
        self.anchor_count
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, image_id: String, table: Vec<f32>) -> Result<(), SynthError> {
        if table.len() != self.feature_dim * self.anchor_count {
            return Err(SynthError::Features(format!(
                "table for {image_id} has {} values, expected {}",
                table.len(),
                self.feature_dim * self.anchor_count
            )));
        }
        if self.index.contains_key(&image_id) {
            return Err(SynthError::Features(format!("duplicate image id {image_id}")));
        }
        self.index.insert(image_id.clone(), self.ids.len());
        self.ids.push(image_id);
        self.tables.push(table);
        Ok(())
    }

    pub fn table(&self, image_id: &str) -> Option<&[f32]> {
        self.index.get(image_id).map(|&i| self.tables[i].as_slice())
    }

    pub fn row(&self, image_id: &str, anchor: usize) -> Option<&[f32]> {
        if anchor >= self.anchor_count {
            return None;
        }
        self.table(image_id)
            .map(|t| &t[anchor * self.feature_dim..(anchor + 1) * self.feature_dim])
    }

    pub fn image_ids(&self) -> &[String] {
        &self.ids
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body: usize = self
            .ids
            .iter()
            .map(|id| 4 + id.len() + 4 * self.feature_dim * self.anchor_count)
            .sum();
        let mut out = Vec::with_capacity(20 + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.anchor_count as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for (id, table) in self.ids.iter().zip(&self.tables) {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in table {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SynthError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(SynthError::Features("bad magic, not a feature sidecar".into()));
        }
        let feature_dim = r.u32()? as usize;
        let anchor_count = r.u32()? as usize;
        let scenes = r.u32()? as usize;
        let mut store = FeatureStore::new(feature_dim, anchor_count);
        let n = feature_dim * anchor_count;
        for _ in 0..scenes {
            let id_len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|e| SynthError::Features(format!("image id is not UTF-8: {e}")))?
                .to_string();
            let raw = r.take(4 * n)?;
            let table = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.insert(id, table)?;
        }
        if r.pos != bytes.len() {
            return Err(SynthError::Features(format!(
                "{} trailing bytes after last scene",
                bytes.len() - r.pos
            )));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let path = path.as_ref();
        write_atomic(path, &self.to_bytes()).map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SynthError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| SynthError::Features("truncated feature sidecar".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SynthError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
