use super::Waveform;
use crate::error::{Error, Result};

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (energy(x) / x.len() as f64).sqrt()
}

/// `10 log10(sum(clean^2) / sum(noise^2))` in dB.
pub fn measure_snr(clean: &Waveform, noise: &Waveform) -> Result<f64> {
    snr_db(clean.samples(), noise.samples())
}

pub(crate) fn snr_db(clean: &[f64], noise: &[f64]) -> Result<f64> {
    if clean.len() != noise.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: clean {} vs noise {}",
            clean.len(),
            noise.len()
        )));
    }
    let es = energy(clean);
    let en = energy(noise);
    if en <= 0.0 {
        return Err(Error::DegenerateInput("noise has zero energy".into()));
    }
    if es <= 0.0 {
        return Err(Error::DegenerateInput("clean signal has zero energy".into()));
    }
    Ok(10.0 * (es / en).log10())
}
