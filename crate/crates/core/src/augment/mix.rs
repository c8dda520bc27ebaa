use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::signal::{energy, rms, Waveform, SAMPLE_RATE};

/// Crossfade length used when tiling short noise, 50 ms.
pub const CROSSFADE_SAMPLES: usize = SAMPLE_RATE as usize / 20;
pub const MIN_BABBLE_TALKERS: usize = 5;
pub const MAX_BABBLE_TALKERS: usize = 20;

/// Repeats `x` with a linear crossfade at each seam until it covers `len`
/// samples.
pub fn tile(x: &[f64], len: usize) -> Vec<f64> {
    if x.len() >= len {
        return x[..len].to_vec();
    }
    let cf = CROSSFADE_SAMPLES.min(x.len() / 2);
    let mut out = x.to_vec();
    while out.len() < len {
        let start = out.len() - cf;
        for i in 0..cf {
            let w = (i + 1) as f64 / (cf + 1) as f64;
            out[start + i] = out[start + i] * (1.0 - w) + x[i] * w;
        }
        out.extend_from_slice(&x[cf..]);
    }
    out.truncate(len);
    out
}

/// Exactly `len` samples of `x`: a random-offset crop when longer, a tiled
/// extension from a random offset when shorter.
pub fn fit_length(x: &[f64], len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if x.len() >= len {
        let off = rng.random_range(0..=x.len() - len);
        return x[off..off + len].to_vec();
    }
    let long = tile(x, len + x.len());
    let off = rng.random_range(0..x.len());
    long[off..off + len].to_vec()
}

#[derive(Debug, Clone)]
pub struct Babble {
    pub wave: Waveform,
    /// Pool indices of the overlapped talkers.
    pub talkers: Vec<usize>,
}

/// Overlaps 5 to 20 randomly chosen talkers from `pool`, each equalized to
/// unit RMS, and renormalizes the sum to unit RMS.
pub fn synth_babble(pool: &[Waveform], target_len: usize, seed: u64) -> Result<Babble> {
    if pool.len() < MAX_BABBLE_TALKERS {
        return Err(Error::InsufficientPool(format!(
            "babble needs at least {MAX_BABBLE_TALKERS} utterances, pool has {}",
            pool.len()
        )));
    }
    if target_len == 0 {
        return Err(Error::InvalidInput("babble length must be positive".into()));
    }
    let mut rng = rng_for(seed, &[]);
    let k = rng.random_range(MIN_BABBLE_TALKERS..=MAX_BABBLE_TALKERS);
    let talkers = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
    let mut sum = vec![0.0; target_len];
    for &i in &talkers {
        let seg = fit_length(pool[i].samples(), target_len, &mut rng);
        let r = rms(&seg);
        if r == 0.0 {
            return Err(Error::DegenerateInput(format!("babble talker {i} is silent")));
        }
        for (s, v) in sum.iter_mut().zip(&seg) {
            *s += v / r;
        }
    }
    let r = rms(&sum);
    if r == 0.0 {
        return Err(Error::DegenerateInput("babble sum is silent".into()));
    }
    sum.iter_mut().for_each(|s| *s /= r);
    Ok(Babble {
        wave: Waveform::at_16k(sum)?,
        talkers,
    })
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixture: Waveform,
    /// Scale applied to the noise before summation.
    pub noise_scale: f64,
    /// Peak-normalization gain applied to the sum (1 when no clipping).
    pub gain: f64,
}

impl Mixture {
    /// The clean component as it appears inside the mixture.
    pub fn clean_component(&self, clean: &Waveform) -> Waveform {
        clean.scaled(self.gain)
    }
}

/// Adds `noise` to `clean` at `target_snr_db`. Noise is fitted to the
/// clean length first; if the sum peaks above 1 both components are scaled
/// down together.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, target_snr_db: f64, seed: u64) -> Result<Mixture> {
    clean.require_pipeline_rate()?;
    noise.require_pipeline_rate()?;
    if !target_snr_db.is_finite() {
        return Err(Error::InvalidInput("target SNR must be finite".into()));
    }
    if clean.is_empty() {
        return Err(Error::InvalidInput("empty clean signal".into()));
    }
    let ec = energy(clean.samples());
    if ec == 0.0 {
        return Err(Error::DegenerateInput("clean signal has zero energy".into()));
    }
    if noise.is_empty() || energy(noise.samples()) == 0.0 {
        return Err(Error::DegenerateInput("noise has zero energy".into()));
    }
    let mut rng = rng_for(seed, &[]);
    let n = fit_length(noise.samples(), clean.len(), &mut rng);
    let en = energy(&n);
    if en == 0.0 {
        return Err(Error::DegenerateInput("noise crop has zero energy".into()));
    }
    let noise_scale = (ec / (en * 10f64.powf(target_snr_db / 10.0))).sqrt();
    let mut mix: Vec<f64> = clean
        .samples()
        .iter()
        .zip(&n)
        .map(|(c, v)| c + noise_scale * v)
        .collect();
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if gain != 1.0 {
        mix.iter_mut().for_each(|v| *v *= gain);
    }
    Ok(Mixture {
        mixture: Waveform::at_16k(mix)?,
        noise_scale,
        gain,
    })
}

/// Babble and non-babble noise scaled to equal energy and summed.
pub fn combine_noises(babble: &[f64], nonbabble: &[f64]) -> Result<Vec<f64>> {
    let len = babble.len().min(nonbabble.len());
    let rb = rms(&babble[..len]);
    let rn = rms(&nonbabble[..len]);
    if rb == 0.0 || rn == 0.0 {
        return Err(Error::DegenerateInput("silent noise component".into()));
    }
    Ok((0..len).map(|i| babble[i] / rb + nonbabble[i] / rn).collect())
}
