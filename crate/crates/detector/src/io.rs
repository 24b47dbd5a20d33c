//! Detector checkpoints: a JSON header next to a little-endian `f64` blob,
//! plus the resumable training state.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lineage_core::{Layout, ParamVector};
use serde::{Deserialize, Serialize};

use crate::error::{io, DetectorError, Result};
use crate::model::{DetectorConfig, DetectorParams};
use crate::train::TrainState;

pub const DETECTOR_FORMAT_VERSION: u32 = 1;
pub const HEADER_FILE: &str = "detector.json";
pub const BLOB_FILE: &str = "detector.f64";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: DetectorConfig,
    layout: Layout,
    values: usize,
    blob: String,
}

/// Writes `detector.json` and `detector.f64` into `dir`; returns the header path.
pub fn save_detector(params: &DetectorParams, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let header = Header {
        format_version: DETECTOR_FORMAT_VERSION,
        config: params.config.clone(),
        layout: params.values.layout().as_ref().clone(),
        values: params.values.len(),
        blob: BLOB_FILE.into(),
    };
    let blob = dir.join(BLOB_FILE);
    let bytes: Vec<u8> = params
        .values
        .values()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    fs::write(&blob, bytes).map_err(io(&blob))?;
    let path = dir.join(HEADER_FILE);
    let mut json = serde_json::to_string_pretty(&header).expect("header serializes");
    json.push('\n');
    if let Err(e) = fs::write(&path, json) {
        let _ = fs::remove_file(&blob);
        return Err(io(&path)(e));
    }
    Ok(path)
}

pub fn load_detector(dir: &Path) -> Result<DetectorParams> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let format = |reason: String| DetectorError::Format {
        path: path.clone(),
        reason,
    };
    let header: Header = serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
    if header.format_version != DETECTOR_FORMAT_VERSION {
        return Err(format(format!(
            "format version {} (supported: {DETECTOR_FORMAT_VERSION})",
            header.format_version
        )));
    }
    header.config.validate()?;
    if header.layout != header.config.layout() {
        return Err(format(
            "parameter layout does not match the configuration".into(),
        ));
    }
    let blob = dir.join(&header.blob);
    let bytes = fs::read(&blob).map_err(io(&blob))?;
    if bytes.len() != header.values * 8 || header.values != header.layout.total() {
        return Err(DetectorError::Format {
            path: blob,
            reason: format!("{} bytes for {} values", bytes.len(), header.values),
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DetectorParams {
        values: ParamVector::new(Arc::new(header.layout), values)?,
        config: header.config,
    })
}

pub const STATE_FILE: &str = "train_state.json";

#[derive(Serialize, Deserialize)]
struct StateFile {
    format_version: u32,
    state: TrainState,
}

/// Writes the resumable training state to `dir/train_state.json`.
///
/// JSON floats are written in shortest round-trip form, so a reloaded state
/// is bit-identical.
pub fn save_train_state(state: &TrainState, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(STATE_FILE);
    let file = StateFile {
        format_version: DETECTOR_FORMAT_VERSION,
        state: state.clone(),
    };
    let json = serde_json::to_string(&file).expect("state serializes");
    fs::write(&path, json).map_err(io(&path))?;
    Ok(path)
}

pub fn load_train_state(dir: &Path) -> Result<TrainState> {
    let path = dir.join(STATE_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let format = |reason: String| DetectorError::Format {
        path: path.clone(),
        reason,
    };
    let file: StateFile = serde_json::from_str(&text).map_err(|e| format(e.to_string()))?;
    if file.format_version != DETECTOR_FORMAT_VERSION {
        return Err(format(format!(
            "format version {} (supported: {DETECTOR_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let s = &file.state;
    s.config.validate()?;
    let n = s.config.layout().total();
    if s.values.len() != n || s.best_values.len() != n || s.log.len() != s.epoch + 1 {
        return Err(format("state does not match its configuration".into()));
    }
    Ok(file.state)
}
