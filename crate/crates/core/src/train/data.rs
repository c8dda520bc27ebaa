use ndarray::{s, Array2};
use rand::seq::SliceRandom;

use super::BatchPolicy;
use crate::augment::{CorpusManifest, ManifestEntry, NoiseKind, Split};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::signal::wav::read_wav_16k;
use crate::signal::Waveform;
use crate::track::{frames_for_samples, ArticulatoryTrack};

/// One in-memory training example.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub key: String,
    pub utterance_id: String,
    /// Clean speech scaled to match its share of `noisy`.
    pub clean: Waveform,
    pub noisy: Option<Waveform>,
    pub noise_kind: Option<NoiseKind>,
    pub snr_db: Option<f64>,
    /// Raw (unnormalized) track, exactly `frames_for_samples(len)` frames.
    pub track: Array2<f64>,
}

impl Utterance {
    /// What the model sees: the noisy signal when present.
    pub fn input(&self) -> &Waveform {
        self.noisy.as_ref().unwrap_or(&self.clean)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub items: Vec<Utterance>,
}

/// Reads audio and track for one entry and checks their alignment.
pub fn load_entry(manifest: &CorpusManifest, e: &ManifestEntry, with_noisy: bool) -> Result<Utterance> {
    let corrupt = |reason: String| Error::CorruptEntry { id: e.key(), reason };
    let clean = read_wav_16k(&manifest.resolve(&e.clean_path))?.scaled(e.clean_gain());
    let noisy = match (&e.noisy_path, with_noisy) {
        (Some(p), true) => {
            let n = read_wav_16k(&manifest.resolve(p))?;
            if n.len() != clean.len() {
                return Err(corrupt(format!("noisy length {} != clean length {}", n.len(), clean.len())));
            }
            Some(n)
        }
        _ => None,
    };
    let track = ArticulatoryTrack::read(&manifest.resolve(&e.track_path))?
        .resampled(crate::track::TRACK_FRAME_RATE)?;
    let want = frames_for_samples(clean.len());
    if track.frames().abs_diff(want) > 1 {
        return Err(corrupt(format!(
            "track has {} frames, audio implies {want}",
            track.frames()
        )));
    }
    Ok(Utterance {
        key: e.key(),
        utterance_id: e.utterance_id.clone(),
        clean,
        noisy,
        noise_kind: e.noise_kind,
        snr_db: e.snr_db,
        track: track.fitted(want).channels().clone(),
    })
}

impl Dataset {
    /// Entries of `split`: augmented variants when `noisy`, clean entries
    /// otherwise.
    pub fn load(manifest: &CorpusManifest, split: Split, noisy: bool) -> Result<Self> {
        let items = manifest
            .split(split)
            .filter(|e| e.is_augmented() == noisy)
            .map(|e| load_entry(manifest, e, noisy))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Equal-length group of utterances ready for one forward pass.
#[derive(Debug, Clone)]
pub struct Batch {
    pub keys: Vec<String>,
    pub inputs: Vec<Waveform>,
    pub clean: Vec<Waveform>,
    /// Raw tracks, `frames_for_samples(len)` frames each.
    pub tracks: Vec<Array2<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.inputs.first().map_or(0, Waveform::len)
    }

    /// Trims every member to the shortest one and slices tracks to match.
    pub fn from_items(items: &[&Utterance]) -> Self {
        let len = items.iter().map(|u| u.clean.len()).min().unwrap_or(0);
        let frames = frames_for_samples(len);
        Self {
            keys: items.iter().map(|u| u.key.clone()).collect(),
            inputs: items.iter().map(|u| u.input().truncated(len)).collect(),
            clean: items.iter().map(|u| u.clean.truncated(len)).collect(),
            tracks: items.iter().map(|u| u.track.slice(s![..frames, ..]).to_owned()).collect(),
        }
    }
}

/// Index groups for one epoch: optionally shuffled with `(seed, epoch)`,
/// then packed greedily under the utterance and duration limits.
pub fn batch_plan(dataset: &Dataset, policy: &BatchPolicy, seed: u64, epoch: u64, shuffle: bool) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if shuffle {
        order.shuffle(&mut rng_for(seed, &[epoch]));
    }
    let mut plan = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut dur = 0.0;
    for i in order {
        let d = dataset.items[i].clean.duration_s();
        if !cur.is_empty() && (cur.len() >= policy.utterances || dur + d > policy.max_duration_s) {
            plan.push(std::mem::take(&mut cur));
            dur = 0.0;
        }
        cur.push(i);
        dur += d;
    }
    if !cur.is_empty() {
        plan.push(cur);
    }
    plan
}

pub fn batch_iterator<'a>(
    dataset: &'a Dataset,
    policy: &BatchPolicy,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> impl Iterator<Item = Batch> + 'a {
    batch_plan(dataset, policy, seed, epoch, shuffle).into_iter().map(move |idx| {
        let items: Vec<&Utterance> = idx.iter().map(|i| &dataset.items[*i]).collect();
        Batch::from_items(&items)
    })
}
