//! Ten-channel articulatory tracks and their on-disk layouts.
//!
//! Channel order is fixed: the six oral tract variables, the velum proxy,
//! then the three source features.
//!
//! Two file layouts are supported, chosen by extension:
//!
//! * `.csv`: a header row with the ten channel names, then one row per frame.
//! * `.f32`: raw little-endian `f32`, row-major `frames x 10`, no header.
//!
//! Both layouts imply the [`TRACK_FRAME_RATE`] of 50 Hz.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub const CHANNEL_NAMES: [&str; 10] = [
    "LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD", "VEL", "Per", "Aper", "F0",
];
pub const N_CHANNELS: usize = 10;
/// Channels estimated by the oral-TV task branch.
pub const ORAL_CHANNELS: std::ops::Range<usize> = 0..6;
/// Channels estimated by the velum + source-feature branch.
pub const SOURCE_CHANNELS: std::ops::Range<usize> = 6..10;
pub const TRACK_FRAME_RATE: f64 = 50.0;
/// Audio samples per track frame at 16 kHz.
pub const SAMPLES_PER_FRAME: usize = 320;

/// Number of 50 Hz frames for `n_samples` of 16 kHz audio.
pub fn frames_for_samples(n_samples: usize) -> usize {
    ((n_samples as f64 / SAMPLES_PER_FRAME as f64).round() as usize).max(1)
}

pub fn channel_index(name: &str) -> Option<usize> {
    CHANNEL_NAMES
        .iter()
        .position(|c| c.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatoryTrack {
    channels: Array2<f64>,
    frame_rate: f64,
}

impl ArticulatoryTrack {
    pub fn new(channels: Array2<f64>, frame_rate: f64) -> Result<Self> {
        if channels.ncols() != N_CHANNELS {
            return Err(Error::InvalidInput(format!(
                "track needs {N_CHANNELS} channels, got {}",
                channels.ncols()
            )));
        }
        if channels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("track contains non-finite values".into()));
        }
        if !(frame_rate > 0.0) {
            return Err(Error::InvalidInput("frame rate must be positive".into()));
        }
        Ok(Self {
            channels,
            frame_rate,
        })
    }

    pub fn channels(&self) -> &Array2<f64> {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> ArrayView1<'_, f64> {
        self.channels.column(i)
    }

    pub fn frames(&self) -> usize {
        self.channels.nrows()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    /// First `frames` frames.
    pub fn sliced(&self, frames: usize) -> Self {
        let f = frames.min(self.frames());
        Self {
            channels: self.channels.slice(ndarray::s![..f, ..]).to_owned(),
            frame_rate: self.frame_rate,
        }
    }

    /// Length-adjusts to exactly `frames`, repeating the last frame when
    /// short.
    pub fn fitted(&self, frames: usize) -> Self {
        let n = self.frames();
        let channels = Array2::from_shape_fn((frames, N_CHANNELS), |(t, c)| {
            self.channels[[t.min(n - 1), c]]
        });
        Self {
            channels,
            frame_rate: self.frame_rate,
        }
    }

    /// Linear interpolation onto a new frame rate, keeping the duration.
    pub fn resampled(&self, frame_rate: f64) -> Result<Self> {
        if (frame_rate - self.frame_rate).abs() < 1e-12 {
            return Ok(self.clone());
        }
        let n = self.frames();
        let duration = n as f64 / self.frame_rate;
        let m = ((duration * frame_rate).round() as usize).max(1);
        let channels = Array2::from_shape_fn((m, N_CHANNELS), |(t, c)| {
            let pos = t as f64 * self.frame_rate / frame_rate;
            let i = (pos.floor() as usize).min(n - 1);
            let j = (i + 1).min(n - 1);
            let frac = pos - i as f64;
            self.channels[[i, c]] * (1.0 - frac) + self.channels[[j, c]] * frac
        });
        Self::new(channels, frame_rate)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        match extension(path).as_deref() {
            Some("csv") => {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(CHANNEL_NAMES)?;
                for row in self.channels.outer_iter() {
                    w.write_record(row.iter().map(|v| format!("{v:.9e}")))?;
                }
                w.flush().map_err(|e| Error::io(path, e))?;
                Ok(())
            }
            Some("f32") => {
                let mut bytes = Vec::with_capacity(self.channels.len() * 4);
                for v in self.channels.iter() {
                    bytes.extend_from_slice(&(*v as f32).to_le_bytes());
                }
                let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
                f.write_all(&bytes).map_err(|e| Error::io(path, e))
            }
            _ => Err(unknown_extension(path)),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        match extension(path).as_deref() {
            Some("csv") => {
                let mut r = csv::Reader::from_path(path)?;
                let header = r.headers()?.clone();
                let names: Vec<&str> = header.iter().map(str::trim).collect();
                if names != CHANNEL_NAMES {
                    return Err(Error::InvalidInput(format!(
                        "{}: unexpected track header {names:?}",
                        path.display()
                    )));
                }
                let mut data = Vec::new();
                for rec in r.records() {
                    let rec = rec?;
                    for field in rec.iter() {
                        data.push(field.trim().parse::<f64>().map_err(|e| {
                            Error::InvalidInput(format!("{}: {e}", path.display()))
                        })?);
                    }
                }
                let frames = data.len() / N_CHANNELS;
                let channels = Array2::from_shape_vec((frames, N_CHANNELS), data)
                    .map_err(|e| Error::InvalidInput(e.to_string()))?;
                Self::new(channels, TRACK_FRAME_RATE)
            }
            Some("f32") => {
                let mut bytes = Vec::new();
                std::fs::File::open(path)
                    .and_then(|mut f| f.read_to_end(&mut bytes))
                    .map_err(|e| Error::io(path, e))?;
                if bytes.len() % (4 * N_CHANNELS) != 0 {
                    return Err(Error::InvalidInput(format!(
                        "{}: size {} is not a whole number of frames",
                        path.display(),
                        bytes.len()
                    )));
                }
                let data: Vec<f64> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect();
                let frames = data.len() / N_CHANNELS;
                let channels = Array2::from_shape_vec((frames, N_CHANNELS), data)
                    .map_err(|e| Error::InvalidInput(e.to_string()))?;
                Self::new(channels, TRACK_FRAME_RATE)
            }
            _ => Err(unknown_extension(path)),
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

fn unknown_extension(path: &Path) -> Error {
    Error::InvalidInput(format!(
        "{}: track files must end in .csv or .f32",
        path.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ArticulatoryTrack {
        let ch = Array2::from_shape_fn((7, 10), |(t, c)| t as f64 * 0.5 + c as f64);
        ArticulatoryTrack::new(ch, TRACK_FRAME_RATE).unwrap()
    }

    #[test]
    fn frame_arithmetic() {
        assert_eq!(frames_for_samples(16000), 50);
        assert_eq!(frames_for_samples(24000), 75);
        assert_eq!(frames_for_samples(16159), 50);
        assert_eq!(frames_for_samples(16160), 51);
    }

    #[test]
    fn both_layouts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample();
        for name in ["t.csv", "t.f32"] {
            let p = dir.path().join(name);
            t.write(&p).unwrap();
            assert_eq!(ArticulatoryTrack::read(&p).unwrap(), t);
        }
        assert!(t.write(&dir.path().join("t.txt")).is_err());
    }

    #[test]
    fn rejects_wrong_width_and_nan() {
        assert!(ArticulatoryTrack::new(Array2::zeros((3, 9)), 50.0).is_err());
        let mut ch = Array2::zeros((3, 10));
        ch[[1, 1]] = f64::NAN;
        assert!(ArticulatoryTrack::new(ch, 50.0).is_err());
    }

    #[test]
    fn resampling_keeps_duration() {
        let t = sample().resampled(100.0).unwrap();
        assert_eq!(t.frames(), 14);
        assert!((t.channels()[[2, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn channel_lookup() {
        assert_eq!(channel_index("ttcd"), Some(5));
        assert_eq!(channel_index("F0"), Some(9));
        assert_eq!(channel_index("XX"), None);
    }
}
