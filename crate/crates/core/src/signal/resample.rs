use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

const ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;
const ROLLOFF: f64 = 0.95;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The output has `round(len * target / source)` samples.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    let source = wave.sample_rate();
    if source == target_rate {
        return Ok(wave.clone());
    }
    let ratio = target_rate as f64 / source as f64;
    let x = wave.samples();
    let out_len = (x.len() as f64 * ratio).round() as usize;
    // Cutoff relative to the input Nyquist.
    let cutoff = ratio.min(1.0) * ROLLOFF;
    let half_width = ZERO_CROSSINGS / cutoff;
    let norm = bessel_i0(KAISER_BETA);
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let t = m as f64 / ratio;
        let lo = ((t - half_width).ceil().max(0.0)) as usize;
        let hi = ((t + half_width).floor() as isize).min(x.len() as isize - 1);
        let mut acc = 0.0;
        if hi >= lo as isize {
            for (n, &xn) in x.iter().enumerate().take(hi as usize + 1).skip(lo) {
                let d = t - n as f64;
                let r = d / half_width;
                let win = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm;
                let arg = cutoff * d;
                let sinc = if arg.abs() < 1e-12 {
                    1.0
                } else {
                    (PI * arg).sin() / (PI * arg)
                };
                acc += xn * cutoff * sinc * win;
            }
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Peak frequency by zero-padded FFT and parabolic interpolation on
    /// the log magnitude.
    fn peak_frequency(x: &[f64], rate: f64) -> f64 {
        use rustfft::{num_complex::Complex64, FftPlanner};
        let n = 1 << 20;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let len = x.len();
        for (i, v) in x.iter().enumerate() {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos();
            buf[i] = Complex64::new(v * w, 0.0);
        }
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm().ln()).collect();
        let k = (1..n / 2 - 1)
            .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
            .unwrap();
        let (a, b, c) = (mags[k - 1], mags[k], mags[k + 1]);
        let delta = 0.5 * (a - c) / (a - 2.0 * b + c);
        (k as f64 + delta) * rate / n as f64
    }

    fn tone(freq: f64, rate: u32, seconds: f64) -> Waveform {
        let n = (rate as f64 * seconds) as usize;
        let s = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    #[test]
    fn same_rate_is_identity() {
        let w = tone(440.0, 16000, 0.1);
        assert_eq!(resample(&w, 16000).unwrap(), w);
    }

    #[test]
    fn upsampling_length() {
        let w = tone(440.0, 8000, 1.0);
        let r = resample(&w, 16000).unwrap();
        assert_eq!(r.len(), 16000);
        assert_eq!(r.sample_rate(), 16000);
    }

    #[test]
    fn frequency_is_preserved() {
        for (from, to, f) in [(8000, 16000, 1234.5), (44100, 16000, 3000.0), (22050, 16000, 440.0)] {
            let w = tone(f, from, 1.0);
            let r = resample(&w, to).unwrap();
            let measured = peak_frequency(&r.samples()[200..r.len() - 200], to as f64);
            assert!((measured - f).abs() < 0.1, "{from}->{to}: {measured} vs {f}");
        }
    }

    #[test]
    fn downsampling_removes_content_above_nyquist() {
        let w = tone(7000.0, 16000, 0.5);
        let r = resample(&w, 8000).unwrap();
        let interior = &r.samples()[200..r.len() - 200];
        assert!(super::super::rms(interior) < 1e-2);
    }
}
