//! Sectioned checkpoint files.
//!
//! ```text
//! magic "GLCK" version:u32 sections:u32
//! sections × { name_len:u32 name offset:u64 length:u64 }
//! blobs, in table order
//! ```
//! Offsets are absolute. Sections are kept sorted by name, so equal contents
//! always serialize to equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use glca_numerics::{AdamState, ParamStore};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{format_err, io_err, Result};
use crate::shard::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: BTreeMap<String, Vec<u8>>,
}

/// Where a training run stands. Batches and noise are pure functions of
/// `seed` and `step`, so this is the whole random state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainState {
    pub seed: u64,
    pub step: u64,
    pub adam_step: u64,
    pub adam_skipped: u64,
}

impl Checkpoint {
    pub fn put(&mut self, name: &str, bytes: Vec<u8>) {
        self.sections.insert(name.to_string(), bytes);
    }

    pub fn put_json<T: Serialize>(&mut self, name: &str, value: &T) {
        self.put(name, serde_json::to_vec_pretty(value).expect("section serializes"));
    }

    pub fn put_params(&mut self, name: &str, params: &ParamStore) {
        self.put(name, params.to_bytes());
    }

    pub fn get(&self, name: &str, path: &Path) -> Result<&[u8]> {
        self.sections
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| format_err(path, format!("checkpoint has no {name:?} section")))
    }

    pub fn get_json<T: DeserializeOwned>(&self, name: &str, path: &Path) -> Result<T> {
        Ok(serde_json::from_slice(self.get(name, path)?)?)
    }

    pub fn get_params(&self, name: &str, path: &Path) -> Result<ParamStore> {
        Ok(ParamStore::from_bytes(self.get(name, path)?)?)
    }

    /// Stores optimizer moments under `optimizer` as `m.`/`v.` prefixed
    /// entries and the counters under `state`.
    pub fn put_optimizer(&mut self, adam: &AdamState, seed: u64, step: u64) {
        let mut moments = ParamStore::new();
        moments.merge_prefixed("m.", &adam.m);
        moments.merge_prefixed("v.", &adam.v);
        self.put_params("optimizer", &moments);
        self.put_json(
            "state",
            &TrainState {
                seed,
                step,
                adam_step: adam.step,
                adam_skipped: adam.skipped,
            },
        );
    }

    pub fn get_optimizer(&self, path: &Path) -> Result<(AdamState, TrainState)> {
        let state: TrainState = self.get_json("state", path)?;
        let moments = self.get_params("optimizer", path)?;
        let adam = AdamState {
            step: state.adam_step,
            skipped: state.adam_skipped,
            m: moments.extract_prefixed("m."),
            v: moments.extract_prefixed("v."),
        };
        Ok((adam, state))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        let table: usize = self.sections.keys().map(|k| 4 + k.len() + 16).sum();
        let mut offset = (out.len() + table) as u64;
        for (name, blob) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            offset += blob.len() as u64;
        }
        for blob in self.sections.values() {
            out.extend_from_slice(blob);
        }
        out
    }

    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| format_err(path, msg);
        let word = |at: usize| -> Result<u32> {
            buf.get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(|| bad("truncated header"))
        };
        let long = |at: usize| -> Result<u64> {
            buf.get(at..at + 8)
                .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                .ok_or_else(|| bad("truncated section table"))
        };
        if buf.get(..4) != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(bad("not a checkpoint file"));
        }
        if word(4)? != CHECKPOINT_VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let count = word(8)? as usize;
        let mut at = 12;
        let mut sections = BTreeMap::new();
        let mut end = 0usize;
        for _ in 0..count {
            let len = word(at)? as usize;
            let name = buf
                .get(at + 4..at + 4 + len)
                .and_then(|b| std::str::from_utf8(b).ok())
                .ok_or_else(|| bad("bad section name"))?
                .to_string();
            at += 4 + len;
            let offset = long(at)? as usize;
            let length = long(at + 8)? as usize;
            at += 16;
            let blob = buf
                .get(offset..offset.saturating_add(length))
                .ok_or_else(|| bad("section runs past the end of the file"))?;
            end = end.max(offset + length);
            sections.insert(name, blob.to_vec());
        }
        if end.max(at) != buf.len() {
            return Err(bad("checkpoint has unreferenced trailing bytes"));
        }
        Ok(Self { sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&buf, path)
    }
}
