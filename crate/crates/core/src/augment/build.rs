use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::manifest::{CorpusManifest, ManifestEntry, Split};
use super::mix::{combine_noises, fit_length, mix_at_snr, synth_babble};
use super::{NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::seed::{rng_for, tag};
use crate::signal::wav::{read_wav_16k, write_wav, WavFormat};
use crate::signal::Waveform;

pub fn load_pool(paths: &[PathBuf]) -> Result<Vec<Waveform>> {
    paths.iter().map(|p| read_wav_16k(p)).collect()
}

struct Pools {
    babble: Vec<Waveform>,
    nonbabble: Vec<Waveform>,
}

impl Pools {
    fn load(babble: &NoiseSpec, nonbabble: &NoiseSpec) -> Result<Self> {
        if babble.kind != NoiseKind::Babble || nonbabble.kind != NoiseKind::Nonbabble {
            return Err(Error::InvalidInput(
                "expected one babble and one non-babble noise spec".into(),
            ));
        }
        babble.validate()?;
        nonbabble.validate()?;
        Ok(Self {
            babble: load_pool(&babble.source_pool)?,
            nonbabble: load_pool(&nonbabble.source_pool)?,
        })
    }

    fn noise(&self, kind: NoiseKind, len: usize, seed: u64) -> Result<Waveform> {
        let babble = || synth_babble(&self.babble, len, seed).map(|b| b.wave);
        let nonbabble = || {
            let mut rng = rng_for(seed, &[1]);
            let i = rng.random_range(0..self.nonbabble.len());
            Waveform::at_16k(fit_length(self.nonbabble[i].samples(), len, &mut rng))
        };
        match kind {
            NoiseKind::Babble => babble(),
            NoiseKind::Nonbabble => nonbabble(),
            NoiseKind::Combined => {
                let b = babble()?;
                let n = nonbabble()?;
                Waveform::at_16k(combine_noises(b.samples(), n.samples())?)
            }
        }
    }
}

fn augment_entry(
    src: &CorpusManifest,
    out: &CorpusManifest,
    entry: &ManifestEntry,
    pools: &Pools,
    kind: NoiseKind,
    snrs: &[f64],
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    let clean = read_wav_16k(&src.resolve(&entry.clean_path))?;
    let mut produced = Vec::with_capacity(snrs.len());
    for (li, &snr) in snrs.iter().enumerate() {
        let vseed = crate::seed::derive_seed(seed, &[tag(&entry.utterance_id), tag(kind.as_str()), li as u64]);
        let noise = pools.noise(kind, clean.len(), vseed)?;
        let mix = mix_at_snr(&clean, &noise, snr, crate::seed::derive_seed(vseed, &[2]))?;
        let mut e = ManifestEntry {
            utterance_id: entry.utterance_id.clone(),
            split: entry.split,
            clean_path: out.relativize(&src.resolve(&entry.clean_path)),
            noisy_path: None,
            noise_kind: Some(kind),
            snr_db: Some(snr),
            mix_gain: (mix.gain != 1.0).then_some(mix.gain),
            track_path: out.relativize(&src.resolve(&entry.track_path)),
            duration_s: entry.duration_s,
        };
        let rel = PathBuf::from("noisy").join(entry.split.as_str()).join(format!("{}.wav", e.key()));
        write_wav(&out.root.join(&rel), &mix.mixture, WavFormat::Float32)?;
        e.noisy_path = Some(rel);
        produced.push(e);
    }
    Ok(produced)
}

fn carry_clean(src: &CorpusManifest, out: &mut CorpusManifest, keep: impl Fn(&ManifestEntry) -> bool) {
    for e in src.clean_entries().filter(|e| keep(e)) {
        let mut c = e.clone();
        c.clean_path = out.relativize(&src.resolve(&e.clean_path));
        c.track_path = out.relativize(&src.resolve(&e.track_path));
        out.entries.push(c);
    }
}

/// Three variants (babble, non-babble, combined) per clean train/dev
/// utterance, merged with the clean entries. Noisy audio is written under
/// `out_root/noisy/<split>/`.
pub fn build_train_dev(
    manifest: &CorpusManifest,
    babble: &NoiseSpec,
    nonbabble: &NoiseSpec,
    seed: u64,
    out_root: &Path,
) -> Result<CorpusManifest> {
    let pools = Pools::load(babble, nonbabble)?;
    let sources: Vec<&ManifestEntry> = manifest
        .clean_entries()
        .filter(|e| e.split != Split::Test)
        .collect();
    if sources.is_empty() {
        return Err(Error::InvalidInput("manifest has no clean train/dev entries".into()));
    }
    let mut meta = manifest.metadata.clone();
    meta.seed = seed;
    meta.noise_pools = babble.source_pool.iter().chain(&nonbabble.source_pool).cloned().collect();
    let mut out = CorpusManifest::new(meta, out_root);
    carry_clean(manifest, &mut out, |_| true);
    for e in sources {
        for kind in [NoiseKind::Babble, NoiseKind::Nonbabble, NoiseKind::Combined] {
            let spec = if kind == NoiseKind::Nonbabble { nonbabble } else { babble };
            let mut rng = rng_for(seed, &[tag(&e.utterance_id), tag(kind.as_str()), spec.seed]);
            let snrs = spec.snr_policy.draw(&mut rng);
            let vseed = crate::seed::derive_seed(seed, &[spec.seed]);
            let produced = augment_entry(manifest, &out, e, &pools, kind, &snrs, vseed)?;
            out.entries.extend(produced);
        }
    }
    out.validate(true)?;
    Ok(out)
}

fn canonical(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Babble and non-babble variants at every configured level for each clean
/// test utterance. Fails if any test noise file is also a training noise
/// file.
pub fn build_test(
    manifest: &CorpusManifest,
    babble: &NoiseSpec,
    nonbabble: &NoiseSpec,
    train_pools: &[PathBuf],
    out_root: &Path,
) -> Result<CorpusManifest> {
    let train: HashSet<PathBuf> = train_pools.iter().map(|p| canonical(p)).collect();
    if let Some(shared) = babble
        .source_pool
        .iter()
        .chain(&nonbabble.source_pool)
        .find(|p| train.contains(&canonical(p)))
    {
        return Err(Error::ContaminatedEvaluation(format!(
            "{} is in both the training and test noise pools",
            shared.display()
        )));
    }
    let pools = Pools::load(babble, nonbabble)?;
    let sources: Vec<&ManifestEntry> = manifest.split(Split::Test).filter(|e| !e.is_augmented()).collect();
    if sources.is_empty() {
        return Err(Error::InvalidInput("manifest has no clean test entries".into()));
    }
    let seed = crate::seed::derive_seed(babble.seed, &[nonbabble.seed]);
    let mut meta = manifest.metadata.clone();
    meta.seed = seed;
    meta.noise_pools = babble.source_pool.iter().chain(&nonbabble.source_pool).cloned().collect();
    let mut out = CorpusManifest::new(meta, out_root);
    carry_clean(manifest, &mut out, |e| e.split == Split::Test);
    for e in sources {
        for spec in [babble, nonbabble] {
            let mut rng = rng_for(seed, &[tag(&e.utterance_id), tag(spec.kind.as_str())]);
            let snrs = spec.snr_policy.draw(&mut rng);
            let produced = augment_entry(manifest, &out, e, &pools, spec.kind, &snrs, spec.seed)?;
            out.entries.extend(produced);
        }
    }
    out.validate(true)?;
    Ok(out)
}
