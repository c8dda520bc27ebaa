//! Noisy corpus construction: babble synthesis, SNR-exact mixing, the
//! train/dev and test condition matrices, manifests, and a synthetic toy
//! corpus with known articulatory ground truth.

mod build;
mod manifest;
mod mix;
mod toy;

pub use build::{build_test, build_train_dev, load_pool};
pub use manifest::{CorpusManifest, ManifestEntry, ManifestMetadata, Split, MANIFEST_FORMAT};
pub use mix::{
    combine_noises, fit_length, mix_at_snr, synth_babble, tile, Babble, Mixture, CROSSFADE_SAMPLES,
    MAX_BABBLE_TALKERS, MIN_BABBLE_TALKERS,
};
pub use toy::{
    generate_toy_corpus, generate_toy_noise_pool, synthesize_toy_utterance, toy_channel_ranges, ToyCorpusConfig,
    ToyLatents,
};

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Babble,
    Nonbabble,
    Combined,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Babble => "babble",
            NoiseKind::Nonbabble => "nonbabble",
            NoiseKind::Combined => "combined",
        }
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "babble" => Ok(NoiseKind::Babble),
            "nonbabble" | "non-babble" => Ok(NoiseKind::Nonbabble),
            "combined" => Ok(NoiseKind::Combined),
            _ => Err(Error::InvalidInput(format!("unknown noise kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrPolicy {
    /// One draw per variant from `[lo, hi]` dB.
    Uniform { lo: f64, hi: f64 },
    /// One variant per listed level.
    Levels(Vec<f64>),
}

impl SnrPolicy {
    pub fn train_default() -> Self {
        SnrPolicy::Uniform { lo: 0.0, hi: 10.0 }
    }

    pub fn test_default() -> Self {
        SnrPolicy::Levels(vec![-5.0, 0.0, 5.0, 10.0])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SnrPolicy::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::InvalidInput(format!("bad SNR range [{lo}, {hi}]")));
                }
            }
            SnrPolicy::Levels(l) => {
                if l.is_empty() || l.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("SNR levels must be finite and non-empty".into()));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn draw(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            SnrPolicy::Uniform { lo, hi } if lo == hi => vec![*lo],
            SnrPolicy::Uniform { lo, hi } => vec![rng.random_range(*lo..=*hi)],
            SnrPolicy::Levels(l) => l.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub source_pool: Vec<PathBuf>,
    pub snr_policy: SnrPolicy,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        self.snr_policy.validate()?;
        if self.kind == NoiseKind::Combined {
            return Err(Error::InvalidInput(
                "a noise pool is either babble or non-babble".into(),
            ));
        }
        let min = match self.kind {
            NoiseKind::Babble => MAX_BABBLE_TALKERS,
            _ => 1,
        };
        if self.source_pool.len() < min {
            return Err(Error::InsufficientPool(format!(
                "{} pool has {} files, needs at least {min}",
                self.kind,
                self.source_pool.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn policies() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let v = SnrPolicy::train_default().draw(&mut rng);
            assert_eq!(v.len(), 1);
            assert!((0.0..=10.0).contains(&v[0]));
        }
        assert_eq!(SnrPolicy::test_default().draw(&mut rng).len(), 4);
        assert!(SnrPolicy::Uniform { lo: 3.0, hi: 1.0 }.validate().is_err());
        assert!(SnrPolicy::Levels(vec![]).validate().is_err());
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("non-babble".parse::<NoiseKind>().unwrap(), NoiseKind::Nonbabble);
        assert!("pink".parse::<NoiseKind>().is_err());
    }
}
