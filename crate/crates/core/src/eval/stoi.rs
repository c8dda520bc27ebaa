//! Short-time objective intelligibility.
//!
//! Signals are resampled to 10 kHz, frames more than 40 dB below the
//! loudest clean frame are dropped from both signals, and 30-frame
//! segments of 15 one-third octave band envelopes are compared with a
//! clipped correlation.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::Waveform;

const FS: u32 = 10_000;
const N_FRAME: usize = 256;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;

/// Score in `[0, 1]` for `degraded` against `clean`.
pub fn stoi(clean: &Waveform, degraded: &Waveform) -> Result<f64> {
    if clean.len() != degraded.len() {
        return Err(Error::InvalidInput(format!(
            "stoi needs equal lengths, got {} and {}",
            clean.len(),
            degraded.len()
        )));
    }
    if clean.sample_rate() != degraded.sample_rate() {
        return Err(Error::InvalidInput("stoi needs equal sample rates".into()));
    }
    let (x, y) = if clean.sample_rate() == FS {
        (clean.samples().to_vec(), degraded.samples().to_vec())
    } else {
        let r = PolyResampler::new(FS, clean.sample_rate());
        (r.apply(clean.samples()), r.apply(degraded.samples()))
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let plan = FftPlanner::new().plan_fft_forward(NFFT);
    let xs = band_envelopes(&x, &plan);
    let ys = band_envelopes(&y, &plan);
    let frames = xs.len();
    if frames < SEGMENT {
        return Err(Error::InvalidInput(format!(
            "only {frames} active frames after silence removal, need {SEGMENT}"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let n_seg = frames - SEGMENT + 1;
    for m in SEGMENT..=frames {
        for b in 0..NUM_BANDS {
            let xv: Vec<f64> = (m - SEGMENT..m).map(|t| xs[t][b]).collect();
            let yv: Vec<f64> = (m - SEGMENT..m).map(|t| ys[t][b]).collect();
            let alpha = norm(&xv) / (norm(&yv) + f64::EPSILON);
            let yp: Vec<f64> = yv.iter().zip(&xv).map(|(y, x)| (y * alpha).min(x * clip)).collect();
            total += centered_cosine(&xv, &yp);
        }
    }
    Ok(total / (n_seg * NUM_BANDS) as f64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn centered_cosine(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let a: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let b: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = norm(&a) + f64::EPSILON;
    let nb = norm(&b) + f64::EPSILON;
    a.iter().zip(&b).map(|(x, y)| (x / na) * (y / nb)).sum()
}

/// Symmetric Hann of `n` points without the zero end points.
fn hann_inner(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(N_FRAME)).step_by(N_FRAME / 2)
}

fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann_inner(N_FRAME);
    let frame = |s: &[f64], i: usize| -> Vec<f64> { w.iter().zip(&s[i..i + N_FRAME]).map(|(a, b)| a * b).collect() };
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&i| 20.0 * (norm(&frame(x, i)) + f64::EPSILON).log10())
        .collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, e)| max - DYN_RANGE_DB - **e < 0.0)
        .map(|(i, _)| *i)
        .collect();
    let hop = N_FRAME / 2;
    let out_len = if kept.is_empty() { 0 } else { (kept.len() - 1) * hop + N_FRAME };
    let mut xo = vec![0.0; out_len];
    let mut yo = vec![0.0; out_len];
    for (k, &i) in kept.iter().enumerate() {
        let (fx, fy) = (frame(x, i), frame(y, i));
        for j in 0..N_FRAME {
            xo[k * hop + j] += fx[j];
            yo[k * hop + j] += fy[j];
        }
    }
    (xo, yo)
}

/// One-third octave band edges as FFT-bin ranges `[lo, hi)`.
fn band_bins() -> Vec<(usize, usize)> {
    let freqs: Vec<f64> = (0..=NFFT / 2).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |f: f64| {
        freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - f).powi(2).total_cmp(&(b.1 - f).powi(2)))
            .map(|(i, _)| i)
            .expect("non-empty")
    };
    (0..NUM_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Per-frame band amplitudes, `frames x NUM_BANDS`.
fn band_envelopes(x: &[f64], plan: &Arc<dyn Fft<f64>>) -> Vec<[f64; NUM_BANDS]> {
    let w = hann_inner(N_FRAME);
    let bands = band_bins();
    frame_starts(x.len())
        .map(|i| {
            let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
            for j in 0..N_FRAME {
                buf[j].re = w[j] * x[i + j];
            }
            plan.process(&mut buf);
            let mut out = [0.0; NUM_BANDS];
            for (b, (lo, hi)) in bands.iter().enumerate() {
                out[b] = buf[*lo..*hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            }
            out
        })
        .collect()
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Rational-rate resampler with the Kaiser-windowed sinc design used by
/// the Octave `resample` routine.
struct PolyResampler {
    up: usize,
    down: usize,
    h: Vec<f64>,
}

impl PolyResampler {
    fn new(target: u32, source: u32) -> Self {
        let g = gcd(target as u64, source as u64);
        let (p, q) = ((target as u64 / g) as usize, (source as u64 / g) as usize);
        let rejection_db = 60.0;
        let cutoff = 1.0 / (2.0 * p.max(q) as f64);
        let roll_off = cutoff / 10.0;
        let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as i64;
        let beta = 0.1102 * (rejection_db - 8.7);
        let m = (2 * half + 1) as f64;
        let mut h: Vec<f64> = (-half..=half)
            .enumerate()
            .map(|(n, t)| {
                let arg = 2.0 * cutoff * t as f64;
                let sinc = if t == 0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                let r = 2.0 * n as f64 / (m - 1.0) - 1.0;
                let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta);
                kaiser * 2.0 * p as f64 * cutoff * sinc
            })
            .collect();
        let s: f64 = h.iter().sum();
        h.iter_mut().for_each(|v| *v = *v / s * p as f64);
        Self { up: p, down: q, h }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (up, down) = (self.up as i64, self.down as i64);
        let half = (self.h.len() as i64 - 1) / 2;
        let n_out = (x.len() as i64 * up + down - 1) / down;
        (0..n_out)
            .map(|m| {
                // Upsampled-domain position of this output sample.
                let pos = m * down + half;
                let k_lo = ((pos - self.h.len() as i64 + 1) + up - 1).div_euclid(up).max(0);
                let k_hi = (pos.div_euclid(up)).min(x.len() as i64 - 1);
                (k_lo..=k_hi)
                    .map(|k| x[k as usize] * self.h[(pos - k * up) as usize])
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn speechlike(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..len)
            .map(|i| {
                let t = i as f64 / 16000.0;
                let env = (0.5 + 0.5 * (2.0 * PI * 3.0 * t).sin()).powi(2);
                let f0 = 120.0 + 30.0 * (2.0 * PI * 0.7 * t).sin();
                let tone: f64 = (1..8).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum();
                let n: f64 = StandardNormal.sample(&mut rng);
                0.1 * env * (tone + 0.05 * n)
            })
            .collect();
        Waveform::at_16k(samples).unwrap()
    }

    fn with_noise(clean: &Waveform, snr_db: f64, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..clean.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let pc = crate::signal::energy(clean.samples());
        let pn = crate::signal::energy(&noise);
        let k = (pc / pn / 10f64.powf(snr_db / 10.0)).sqrt();
        Waveform::at_16k(clean.samples().iter().zip(&noise).map(|(c, n)| c + k * n).collect()).unwrap()
    }

    #[test]
    fn identity_scores_near_one() {
        let c = speechlike(24000, 1);
        assert!(stoi(&c, &c).unwrap() > 0.99);
    }

    #[test]
    fn decreases_along_snr_ladder() {
        let c = speechlike(32000, 2);
        let scores: Vec<f64> = [20.0, 10.0, 0.0, -5.0, -10.0]
            .iter()
            .map(|s| stoi(&c, &with_noise(&c, *s, 3)).unwrap())
            .collect();
        for w in scores.windows(2) {
            assert!(w[0] >= w[1], "{scores:?}");
        }
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn too_short_or_mismatched() {
        let c = speechlike(3000, 4);
        assert!(matches!(stoi(&c, &c), Err(Error::InvalidInput(_))));
        let d = speechlike(24000, 4);
        assert!(stoi(&c, &d).is_err());
    }

    #[test]
    fn resampler_keeps_a_low_tone() {
        let r = PolyResampler::new(10_000, 16_000);
        let x: Vec<f64> = (0..16000).map(|i| (2.0 * PI * 440.0 * i as f64 / 16000.0).sin()).collect();
        let y = r.apply(&x);
        assert_eq!(y.len(), 10000);
        for (i, v) in y.iter().enumerate().skip(500).take(9000) {
            let want = (2.0 * PI * 440.0 * i as f64 / 10000.0).sin();
            assert!((v - want).abs() < 2e-3, "{i}: {v} vs {want}");
        }
    }

    #[test]
    fn band_edges() {
        let b = band_bins();
        assert_eq!(b[0], (7, 9));
        assert_eq!(b.len(), NUM_BANDS);
        assert!(b.windows(2).all(|w| w[0].1 == w[1].0));
    }
}
