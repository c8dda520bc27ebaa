//! Deterministic DSP kernel shared by every other module.
//!
//! All pipeline-internal audio is mono at [`SAMPLE_RATE`] and stored as
//! `f64`. The canonical analysis geometry is a 400-point periodic Hann
//! window with a 160-sample hop (25 ms / 10 ms), which yields 201 bins.

mod compress;
mod resample;
mod snr;
mod stft;
pub mod wav;

pub use compress::{compress, decompress, CompressedMagnitude};
pub use resample::resample;
pub use snr::{energy, measure_snr, rms};
pub use stft::{istft, stft, ComplexSpectrogram, SpectrogramGeometry, StftPlan, WindowKind};

use crate::error::{Error, Result};

/// Sample rate of every waveform inside the pipeline.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, rejecting non-finite samples and a zero rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Shorthand for a waveform at the pipeline rate.
    pub fn at_16k(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Fails unless the waveform is at the pipeline rate.
    pub fn require_pipeline_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidInput(format!(
                "expected {SAMPLE_RATE} Hz audio, got {} Hz",
                self.sample_rate
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// First `len` samples (or the whole signal if shorter).
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}
