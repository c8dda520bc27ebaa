//! Single-file checkpoints: an 8-byte magic, a format version, a JSON
//! header, then every parameter as little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{FeatureProvider, HeadSet, ModelConfig, SiseModel, TrackNorm};
use crate::error::{Error, Result};
use crate::nn::ParamGroup;
use crate::scenario::Scenario;
use crate::signal::SpectrogramGeometry;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SISECKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
}

/// Enhancement checkpoint a SISE-P inverter expects in front of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessorRef {
    /// Path relative to the directory of the referring checkpoint.
    pub file: String,
    pub param_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub config_digest: String,
    pub geometry: SpectrogramGeometry,
    pub heads: HeadSet,
    pub stage: u8,
    pub seed: u64,
    pub backbone_frozen: bool,
    pub scenario: Option<Scenario>,
    pub param_digest: String,
    pub params: Vec<ParamEntry>,
    pub track_norm: TrackNorm,
    pub preprocessor: Option<PreprocessorRef>,
}

pub fn save_checkpoint(model: &SiseModel, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        config: model.config.clone(),
        config_digest: model.config.digest(),
        geometry: model.config.geometry,
        heads: model.heads,
        stage: model.stage,
        seed: model.seed,
        backbone_frozen: model.backbone_frozen,
        scenario: model.scenario,
        param_digest: model.param_digest(),
        params: model
            .store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                group: p.group,
                rows: p.value.nrows(),
                cols: p.value.ncols(),
            })
            .collect(),
        track_norm: model.track_norm.clone(),
        preprocessor: model.preprocessor.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(20 + json.len() + model.store.n_values() * 8);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, p) in model.store.iter() {
        for v in p.value.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn incompatible(msg: impl Into<String>) -> Error {
    Error::IncompatibleCheckpoint(msg.into())
}

fn read_raw(path: &Path) -> Result<(CheckpointHeader, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(incompatible(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(incompatible(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| incompatible("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| incompatible(format!("bad header: {e}")))?;
    if header.config.digest() != header.config_digest {
        return Err(incompatible("config digest does not match the stored config"));
    }
    if header.geometry != header.config.geometry {
        return Err(incompatible("stored geometry disagrees with the stored config"));
    }
    Ok((header, bytes[20 + hlen..].to_vec()))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    read_raw(path).map(|(h, _)| h)
}

/// Loads a checkpoint. With `expected`, the stored config must match it
/// exactly (by digest).
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<SiseModel> {
    load_checkpoint_with_provider(path, expected, None)
}

pub fn load_checkpoint_with_provider(
    path: &Path,
    expected: Option<&ModelConfig>,
    provider: Option<Arc<dyn FeatureProvider>>,
) -> Result<SiseModel> {
    let (h, data) = read_raw(path)?;
    if let Some(cfg) = expected {
        if cfg.digest() != h.config_digest {
            let what = if cfg.geometry != h.geometry { "geometry" } else { "model config" };
            return Err(incompatible(format!("{what} differs from the checkpoint")));
        }
    }
    let mut model = SiseModel::with_provider(h.config.clone(), h.heads, provider)?;
    let layout: Vec<ParamEntry> = model
        .store
        .iter()
        .map(|(_, p)| ParamEntry {
            name: p.name.clone(),
            group: p.group,
            rows: p.value.nrows(),
            cols: p.value.ncols(),
        })
        .collect();
    if layout != h.params {
        return Err(incompatible("parameter layout differs from the model config"));
    }
    let total: usize = layout.iter().map(|p| p.rows * p.cols).sum();
    if data.len() != total * 8 {
        return Err(incompatible(format!(
            "expected {} bytes of parameters, found {}",
            total * 8,
            data.len()
        )));
    }
    let mut chunks = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let (r, c) = model.store.get(id).value.dim();
        let vals: Vec<f64> = chunks.by_ref().take(r * c).collect();
        model.store.get_mut(id).value = Array2::from_shape_vec((r, c), vals).expect("shape");
    }
    if model.param_digest() != h.param_digest {
        return Err(incompatible("parameter digest mismatch"));
    }
    model.backbone_frozen = h.backbone_frozen;
    model.stage = h.stage;
    model.seed = h.seed;
    model.scenario = h.scenario;
    model.track_norm = h.track_norm;
    model.preprocessor = h.preprocessor;
    Ok(model)
}
