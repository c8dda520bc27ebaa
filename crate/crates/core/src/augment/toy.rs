use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, ManifestEntry, ManifestMetadata, Split};
use super::NoiseKind;
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::signal::wav::{write_wav, WavFormat};
use crate::signal::{Waveform, SAMPLE_RATE};
use crate::track::{frames_for_samples, ArticulatoryTrack, N_CHANNELS, SAMPLES_PER_FRAME, TRACK_FRAME_RATE};

pub const F0_RANGE: (f64, f64) = (80.0, 300.0);
pub const F1_RANGE: (f64, f64) = (300.0, 900.0);
pub const F2_RANGE: (f64, f64) = (900.0, 2500.0);
pub const AMP_RANGE: (f64, f64) = (0.2, 1.0);
pub const VOICING_RANGE: (f64, f64) = (0.5, 1.0);
const F1_BANDWIDTH: f64 = 90.0;
const F2_BANDWIDTH: f64 = 120.0;
const HARMONIC_CEILING: f64 = 7000.0;
const OUTPUT_GAIN: f64 = 0.12;

/// Affine maps from the normalized latents `(1, f1, f2, amp)` to the six
/// oral channels and VEL.
const ORAL_MAP: [[f64; 4]; 7] = [
    [2.0, 10.0, 0.0, 2.0],
    [8.0, -3.0, 4.0, 0.0],
    [40.0, 0.0, 60.0, 0.0],
    [14.0, -12.0, 2.0, 0.0],
    [20.0, 10.0, 30.0, 0.0],
    [1.0, 15.0, -5.0, 0.0],
    [-0.5, 0.0, 0.3, 1.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub n_utts: usize,
    pub duration_s: f64,
    /// Relative spread of utterance durations around `duration_s`.
    pub duration_jitter: f64,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            n_utts: 32,
            duration_s: 2.0,
            duration_jitter: 0.2,
            seed: 0,
        }
    }
}

/// Hidden trajectories of one toy utterance, one value per 50 Hz frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLatents {
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub amp: Vec<f64>,
    pub voicing: Vec<f64>,
}

fn lerp(range: (f64, f64), x: f64) -> f64 {
    range.0 + (range.1 - range.0) * x
}

fn unlerp(range: (f64, f64), v: f64) -> f64 {
    (v - range.0) / (range.1 - range.0)
}

/// Damped random walk on `[0, 1]` with reflecting ends.
fn smooth_walk(n: usize, step: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = rng.random_range(0.2..0.8);
    let mut v = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let e: f64 = StandardNormal.sample(rng);
        v = 0.9 * v + step * e;
        x += v;
        if x < 0.0 {
            x = -x;
            v = -v;
        }
        if x > 1.0 {
            x = 2.0 - x;
            v = -v;
        }
        x = x.clamp(0.0, 1.0);
        out.push(x);
    }
    out
}

impl ToyLatents {
    pub fn random(frames: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut walk = |step| smooth_walk(frames, step, rng);
        let f0 = walk(0.015).into_iter().map(|x| lerp(F0_RANGE, x)).collect();
        let f1 = walk(0.02).into_iter().map(|x| lerp(F1_RANGE, x)).collect();
        let f2 = walk(0.02).into_iter().map(|x| lerp(F2_RANGE, x)).collect();
        let amp = walk(0.02).into_iter().map(|x| lerp(AMP_RANGE, x)).collect();
        let voicing = walk(0.02).into_iter().map(|x| lerp(VOICING_RANGE, x)).collect();
        Self {
            f0,
            f1,
            f2,
            amp,
            voicing,
        }
    }

    pub fn frames(&self) -> usize {
        self.f0.len()
    }

    /// Ground-truth track: oral channels and VEL from the resonances and
    /// amplitude, Per/Aper from the voicing split, F0 verbatim.
    pub fn track(&self) -> ArticulatoryTrack {
        let channels = Array2::from_shape_fn((self.frames(), N_CHANNELS), |(t, c)| {
            let a = self.amp[t];
            let v = self.voicing[t];
            match c {
                0..=6 => {
                    let m = ORAL_MAP[c];
                    m[0] + m[1] * unlerp(F1_RANGE, self.f1[t])
                        + m[2] * unlerp(F2_RANGE, self.f2[t])
                        + m[3] * unlerp(AMP_RANGE, a)
                }
                7 => a * v,
                8 => a * (1.0 - v),
                _ => self.f0[t],
            }
        });
        ArticulatoryTrack::new(channels, TRACK_FRAME_RATE).expect("finite by construction")
    }

    fn at(values: &[f64], n: usize) -> f64 {
        let pos = n as f64 / SAMPLES_PER_FRAME as f64;
        let i = (pos.floor() as usize).min(values.len() - 1);
        let j = (i + 1).min(values.len() - 1);
        let f = (pos - i as f64).min(1.0);
        values[i] * (1.0 - f) + values[j] * f
    }

    /// Renders `len` samples: a band-limited harmonic/noise excitation
    /// through two cascaded unity-peak resonators.
    pub fn render(&self, len: usize, rng: &mut ChaCha8Rng) -> Waveform {
        let fs = SAMPLE_RATE as f64;
        let mut phase = 0.0f64;
        let mut r1 = Resonator::default();
        let mut r2 = Resonator::default();
        let mut out = Vec::with_capacity(len);
        for n in 0..len {
            let f0 = Self::at(&self.f0, n);
            let v = Self::at(&self.voicing, n);
            let amp = Self::at(&self.amp, n);
            phase = (phase + 2.0 * PI * f0 / fs) % (2.0 * PI);
            let harm = harmonic_sample(phase, f0);
            let noise: f64 = StandardNormal.sample(rng);
            let x = v * harm + (1.0 - v) * noise;
            let y1 = r1.step(x, Self::at(&self.f1, n), F1_BANDWIDTH);
            let y2 = r2.step(y1, Self::at(&self.f2, n), F2_BANDWIDTH);
            out.push(OUTPUT_GAIN * amp * y2);
        }
        Waveform::at_16k(out).expect("finite by construction")
    }
}

/// Unit-power sum of harmonics `sin(h phase) / h` tapered below the
/// ceiling, evaluated with the Chebyshev recurrence.
fn harmonic_sample(phase: f64, f0: f64) -> f64 {
    let c2 = 2.0 * phase.cos();
    let mut s_prev = 0.0;
    let mut s = phase.sin();
    let mut acc = 0.0;
    let mut power = 0.0;
    let mut h = 1.0;
    while h * f0 < HARMONIC_CEILING {
        let taper = ((HARMONIC_CEILING - h * f0) / 1000.0).min(1.0);
        let a = taper / h;
        acc += a * s;
        power += 0.5 * a * a;
        let next = c2 * s - s_prev;
        s_prev = s;
        s = next;
        h += 1.0;
    }
    if power > 0.0 {
        acc / power.sqrt()
    } else {
        0.0
    }
}

#[derive(Debug, Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64) -> f64 {
        let fs = SAMPLE_RATE as f64;
        let r = (-PI * bw / fs).exp();
        let theta = 2.0 * PI * freq / fs;
        let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
        let y = gain * x + 2.0 * r * theta.cos() * self.y1 - r * r * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Inclusive per-channel bounds of the toy ground truth.
pub fn toy_channel_ranges() -> [(f64, f64); N_CHANNELS] {
    let mut out = [(0.0, 0.0); N_CHANNELS];
    for (c, m) in ORAL_MAP.iter().enumerate() {
        let lo = m[0] + m[1..].iter().map(|v| v.min(0.0)).sum::<f64>();
        let hi = m[0] + m[1..].iter().map(|v| v.max(0.0)).sum::<f64>();
        out[c] = (lo, hi);
    }
    out[7] = (AMP_RANGE.0 * VOICING_RANGE.0, AMP_RANGE.1 * VOICING_RANGE.1);
    out[8] = (AMP_RANGE.0 * (1.0 - VOICING_RANGE.1), AMP_RANGE.1 * (1.0 - VOICING_RANGE.0));
    out[9] = F0_RANGE;
    out
}

fn utterance_len(cfg: &ToyCorpusConfig, rng: &mut ChaCha8Rng) -> usize {
    let jitter = if cfg.duration_jitter > 0.0 {
        rng.random_range(-cfg.duration_jitter..=cfg.duration_jitter)
    } else {
        0.0
    };
    ((cfg.duration_s * (1.0 + jitter) * SAMPLE_RATE as f64).round() as usize).max(SAMPLES_PER_FRAME)
}

/// One utterance and its latents for `(seed, index)`.
pub fn synthesize_toy_utterance(cfg: &ToyCorpusConfig, index: usize) -> (Waveform, ToyLatents) {
    let mut rng = rng_for(cfg.seed, &[index as u64]);
    let len = utterance_len(cfg, &mut rng);
    let latents = ToyLatents::random(frames_for_samples(len), &mut rng);
    let wave = latents.render(len, &mut rng);
    (wave, latents)
}

fn split_for(i: usize, n: usize) -> Split {
    let n_test = ((n as f64 / 8.0).round() as usize).max(1);
    let n_dev = n_test;
    if i < n - n_dev - n_test {
        Split::Train
    } else if i < n - n_test {
        Split::Dev
    } else {
        Split::Test
    }
}

/// Writes `clean/<id>.wav` and `tracks/<id>.csv` under `out_root` and
/// returns the clean manifest (roughly 75/12.5/12.5 train/dev/test).
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig, out_root: &Path) -> Result<CorpusManifest> {
    if cfg.n_utts < 10 {
        return Err(Error::InvalidInput(format!(
            "toy corpus needs at least 10 utterances, got {}",
            cfg.n_utts
        )));
    }
    if !(cfg.duration_s >= 0.1) || !(0.0..0.9).contains(&cfg.duration_jitter) {
        return Err(Error::InvalidInput("toy duration must be >= 0.1 s, jitter in [0, 0.9)".into()));
    }
    let mut m = CorpusManifest::new(ManifestMetadata::new(cfg.seed), out_root);
    for i in 0..cfg.n_utts {
        let id = format!("toy{i:04}");
        let (wave, latents) = synthesize_toy_utterance(cfg, i);
        let clean_path = PathBuf::from("clean").join(format!("{id}.wav"));
        let track_path = PathBuf::from("tracks").join(format!("{id}.csv"));
        write_wav(&out_root.join(&clean_path), &wave, WavFormat::Float32)?;
        latents.track().write(&out_root.join(&track_path))?;
        m.entries.push(ManifestEntry {
            utterance_id: id,
            split: split_for(i, cfg.n_utts),
            clean_path,
            noisy_path: None,
            noise_kind: None,
            snr_db: None,
            mix_gain: None,
            track_path,
            duration_s: wave.duration_s(),
        });
    }
    Ok(m)
}

/// Noise files for toy runs: toy utterances from an unrelated seed stream
/// for babble, first-order colored Gaussian noise otherwise.
pub fn generate_toy_noise_pool(
    kind: NoiseKind,
    n_files: usize,
    duration_s: f64,
    seed: u64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if kind == NoiseKind::Combined {
        return Err(Error::InvalidInput("pools are babble or non-babble".into()));
    }
    let len = ((duration_s * SAMPLE_RATE as f64).round() as usize).max(1);
    let mut paths = Vec::with_capacity(n_files);
    for i in 0..n_files {
        let wave = match kind {
            NoiseKind::Babble => {
                let cfg = ToyCorpusConfig {
                    n_utts: n_files,
                    duration_s,
                    duration_jitter: 0.0,
                    seed: crate::seed::derive_seed(seed, &[crate::seed::tag("babble-pool")]),
                };
                synthesize_toy_utterance(&cfg, i).0
            }
            _ => {
                let mut rng = rng_for(seed, &[crate::seed::tag("noise-pool"), i as u64]);
                let c: f64 = rng.random_range(-0.9..0.95);
                let mut y = 0.0;
                let raw: Vec<f64> = (0..len)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        y = e + c * y;
                        y
                    })
                    .collect();
                let r = crate::signal::rms(&raw);
                Waveform::at_16k(raw.iter().map(|v| 0.1 * v / r).collect())?
            }
        };
        let p = dir.join(format!("{}_{i:03}.wav", kind.as_str()));
        write_wav(&p, &wave, WavFormat::Float32)?;
        paths.push(p);
    }
    Ok(paths)
}
