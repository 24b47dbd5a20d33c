//! On-disk zoo: a JSON manifest plus one raw little-endian `f64` blob per record.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use lineage_core::ParamVector;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZooError};
use crate::record::{ModelRecord, RecordMeta};
use crate::task::TaskSpec;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooManifest {
    pub format_version: u32,
    pub seed: u64,
    /// Index 0 is the root task; later entries follow the generation chain.
    pub tasks: Vec<TaskSpec>,
    pub records: Vec<RecordMeta>,
    pub warnings: Vec<String>,
}

impl ZooManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn record(&self, id: &str) -> Option<&RecordMeta> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Structural checks: unique ids, resolvable parents one generation up,
    /// roots exactly at generation 1, valid task indices and accuracies.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(ZooError::Manifest(format!(
                "format version {} (supported: {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut by_id = BTreeMap::new();
        for r in &self.records {
            if by_id.insert(r.id.as_str(), r).is_some() {
                return Err(ZooError::Manifest(format!(
                    "duplicate record id `{}`",
                    r.id
                )));
            }
        }
        for r in &self.records {
            if r.task >= self.tasks.len() {
                return Err(ZooError::Manifest(format!(
                    "record `{}` names task {}",
                    r.id, r.task
                )));
            }
            if !(0.0..=1.0).contains(&r.test_accuracy) {
                return Err(ZooError::Manifest(format!(
                    "record `{}` accuracy {}",
                    r.id, r.test_accuracy
                )));
            }
            match (&r.parent_id, r.generation) {
                (None, 1) => {}
                (Some(p), g) if g >= 2 => {
                    let parent = by_id.get(p.as_str()).ok_or_else(|| {
                        ZooError::Manifest(format!("record `{}` names missing parent `{p}`", r.id))
                    })?;
                    if parent.generation + 1 != g {
                        return Err(ZooError::Manifest(format!(
                            "record `{}` (generation {g}) has parent `{p}` of generation {}",
                            r.id, parent.generation
                        )));
                    }
                }
                _ => {
                    return Err(ZooError::Manifest(format!(
                        "record `{}`: generation {} inconsistent with parent {:?}",
                        r.id, r.generation, r.parent_id
                    )))
                }
            }
        }
        Ok(())
    }

    /// Ancestor of `id` at `generation` (the record itself when equal).
    pub fn ancestor_at(&self, id: &str, generation: u32) -> Option<&RecordMeta> {
        let mut cur = self.record(id)?;
        while cur.generation > generation {
            cur = self.record(cur.parent_id.as_deref()?)?;
        }
        (cur.generation == generation).then_some(cur)
    }

    pub fn generations(&self) -> BTreeSet<u32> {
        self.records.iter().map(|r| r.generation).collect()
    }
}

/// A manifest together with the parameters of every record (same order).
#[derive(Debug, Clone, PartialEq)]
pub struct Zoo {
    pub manifest: ZooManifest,
    pub params: Vec<ParamVector>,
}

impl Zoo {
    pub fn new(seed: u64, tasks: Vec<TaskSpec>) -> Self {
        Self {
            manifest: ZooManifest {
                format_version: FORMAT_VERSION,
                seed,
                tasks,
                records: Vec::new(),
                warnings: Vec::new(),
            },
            params: Vec::new(),
        }
    }

    pub fn push(&mut self, r: ModelRecord) {
        self.manifest.records.push(r.meta);
        self.params.push(r.params);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.manifest.records.iter().position(|r| r.id == id)
    }

    pub fn get(&self, id: &str) -> Option<ModelRecord> {
        self.index_of(id).map(|i| self.record(i))
    }

    pub fn record(&self, i: usize) -> ModelRecord {
        ModelRecord {
            meta: self.manifest.records[i].clone(),
            params: self.params[i].clone(),
        }
    }

    /// `lineage_core` view of record `i` without cloning parameters.
    pub fn subject(&self, i: usize) -> lineage_core::similarity::Subject<'_> {
        let m = &self.manifest.records[i];
        lineage_core::similarity::Subject::new(&m.id, &m.arch, &self.params[i])
    }

    /// Writes blobs, then the manifest. On failure, files written by this call are removed.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        self.manifest.validate()?;
        let mut written: Vec<PathBuf> = Vec::new();
        let res = (|| -> Result<PathBuf> {
            fs::create_dir_all(dir.join("blobs")).map_err(|e| ZooError::io(dir, e))?;
            for (meta, p) in self.manifest.records.iter().zip(&self.params) {
                let path = dir.join(&meta.blob);
                let bytes: Vec<u8> = p.values().iter().flat_map(|v| v.to_le_bytes()).collect();
                written.push(path.clone());
                fs::write(&path, bytes).map_err(|e| ZooError::io(&path, e))?;
            }
            let path = dir.join(MANIFEST_FILE);
            written.push(path.clone());
            fs::write(&path, self.manifest.to_json()).map_err(|e| ZooError::io(&path, e))?;
            Ok(path)
        })();
        if res.is_err() {
            for p in &written {
                let _ = fs::remove_file(p);
            }
        }
        res
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| ZooError::io(&path, e))?;
        let manifest = ZooManifest::from_json(&text)?;
        let mut params = Vec::with_capacity(manifest.records.len());
        for meta in &manifest.records {
            let path = dir.join(&meta.blob);
            let bytes = fs::read(&path).map_err(|e| ZooError::io(&path, e))?;
            let layout = meta.arch.layout();
            if bytes.len() != layout.total() * 8 {
                return Err(ZooError::Manifest(format!(
                    "blob {} has {} bytes, layout needs {}",
                    path.display(),
                    bytes.len(),
                    layout.total() * 8
                )));
            }
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(ParamVector::new(layout, values)?);
        }
        Ok(Self { manifest, params })
    }
}
