use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NoiseKind;
use crate::error::{Error, Result};
use crate::nn::hex;
use crate::signal::{SpectrogramGeometry, SAMPLE_RATE};
use crate::track::TRACK_FRAME_RATE;

pub const MANIFEST_FORMAT: &str = "sise-manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub split: Split,
    pub clean_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_kind: Option<NoiseKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Gain applied to both components when the mixture was peak
    /// normalized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix_gain: Option<f64>,
    pub track_path: PathBuf,
    pub duration_s: f64,
}

impl ManifestEntry {
    pub fn is_augmented(&self) -> bool {
        self.noisy_path.is_some()
    }

    /// Gain to apply to the clean file so it matches the speech component
    /// of the noisy file.
    pub fn clean_gain(&self) -> f64 {
        self.mix_gain.unwrap_or(1.0)
    }

    /// `id`, `id__babble_-5`, ...; unique within a valid manifest.
    pub fn key(&self) -> String {
        match (self.noise_kind, self.snr_db) {
            (Some(k), Some(s)) => format!("{}__{}_{}", self.utterance_id, k.as_str(), fmt_snr(s)),
            _ => self.utterance_id.clone(),
        }
    }
}

fn fmt_snr(s: f64) -> String {
    if s.fract() == 0.0 {
        format!("{}", s as i64)
    } else {
        format!("{s:.3}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub format: String,
    pub version: String,
    pub seed: u64,
    pub sample_rate: u32,
    pub track_frame_rate: f64,
    pub geometry: SpectrogramGeometry,
    /// Noise files consumed while building this manifest.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise_pools: Vec<PathBuf>,
}

impl ManifestMetadata {
    pub fn new(seed: u64) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            sample_rate: SAMPLE_RATE,
            track_frame_rate: TRACK_FRAME_RATE,
            geometry: SpectrogramGeometry::canonical(),
            noise_pools: Vec::new(),
        }
    }
}

/// Entries plus metadata. Relative paths are resolved against `root`, the
/// directory the manifest lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub metadata: ManifestMetadata,
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

impl CorpusManifest {
    pub fn new(metadata: ManifestMetadata, root: impl Into<PathBuf>) -> Self {
        Self {
            metadata,
            entries: Vec::new(),
            root: root.into(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// `p` relative to `root` when it lies below it.
    pub fn relativize(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
    }

    pub fn clean_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| !e.is_augmented())
    }

    pub fn augmented_entries(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.is_augmented())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    fn lines(&self) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(self.entries.len() + 1);
        out.push(serde_json::to_string(&self.metadata)?);
        for e in &self.entries {
            out.push(serde_json::to_string(e)?);
        }
        Ok(out)
    }

    /// SHA-256 over the serialized header and entries.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for line in self.lines()? {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        Ok(hex(&h.finalize()))
    }

    /// Structural checks; with `check_files`, referenced files must exist.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        if self.metadata.format != MANIFEST_FORMAT {
            return Err(Error::InvalidInput(format!(
                "not a manifest (format {:?})",
                self.metadata.format
            )));
        }
        let mut keys = HashSet::new();
        for e in &self.entries {
            let corrupt = |reason: &str| Error::CorruptEntry {
                id: e.key(),
                reason: reason.into(),
            };
            let augmented = [e.noisy_path.is_some(), e.noise_kind.is_some(), e.snr_db.is_some()];
            if augmented.iter().any(|b| *b) && !augmented.iter().all(|b| *b) {
                return Err(corrupt("noisy fields must be all present or all absent"));
            }
            if !(e.duration_s > 0.0) {
                return Err(corrupt("duration must be positive"));
            }
            if !keys.insert(e.key()) {
                return Err(corrupt("duplicate (id, noise kind, snr)"));
            }
            if check_files {
                let mut paths = vec![&e.clean_path, &e.track_path];
                paths.extend(e.noisy_path.as_ref());
                for p in paths {
                    if !self.resolve(p).is_file() {
                        return Err(corrupt(&format!("missing file {}", p.display())));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for line in self.lines()? {
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; its directory becomes the resolution root.
    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("{}: empty manifest", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let metadata: ManifestMetadata = serde_json::from_str(&header)?;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line).map_err(|err| Error::CorruptEntry {
                id: format!("line {}", i + 2),
                reason: err.to_string(),
            })?;
            entries.push(e);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self {
            metadata,
            entries,
            root,
        };
        m.validate(false)?;
        Ok(m)
    }
}
