use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::signal::{SpectrogramGeometry, StftPlan, Waveform, WindowKind, SAMPLE_RATE};
use crate::track::{frames_for_samples, SAMPLES_PER_FRAME};

/// Seconds between backbone frames.
pub const FEATURE_STRIDE_S: f64 = 0.02;

/// Per-layer hidden states, each `frames x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub layers: Vec<Array2<f64>>,
    pub frame_stride_s: f64,
}

impl FeatureStack {
    pub fn new(layers: Vec<Array2<f64>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidInput("feature stack needs at least one layer".into()))?;
        if layers.iter().any(|l| l.dim() != first.dim()) {
            return Err(Error::InvalidInput("feature layers differ in shape".into()));
        }
        Ok(Self {
            layers,
            frame_stride_s: FEATURE_STRIDE_S,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn frames(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.layers[0].ncols()
    }
}

/// Softmax-normalized learnable layer mixing logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub logits: Vec<f64>,
}

impl LayerWeights {
    pub fn uniform(n_layers: usize) -> Self {
        Self {
            logits: vec![0.0; n_layers],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        let m = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

/// `sum_l softmax(w)_l * layer_l`.
pub fn weighted_sum(stack: &FeatureStack, w: &LayerWeights) -> Result<Array2<f64>> {
    if w.logits.len() != stack.n_layers() {
        return Err(Error::InvalidInput(format!(
            "{} layer weights for {} layers",
            w.logits.len(),
            stack.n_layers()
        )));
    }
    let mut out = Array2::zeros(stack.layers[0].dim());
    for (l, a) in stack.layers.iter().zip(w.weights()) {
        out.scaled_add(a, l);
    }
    Ok(out)
}

/// A source of per-layer features at a 20 ms stride, such as a wrapper
/// around a pretrained speech encoder. Features from a provider are
/// treated as constants during training.
pub trait FeatureProvider: Send + Sync {
    fn name(&self) -> &str;
    fn n_layers(&self) -> usize;
    fn dim(&self) -> usize;
    fn extract(&self, wave: &Waveform) -> Result<FeatureStack>;
}

pub const TOY_BINS: usize = 40;
pub const TOY_LAYERS: usize = 4;
const TOY_FFT: usize = 512;
const LOG_FLOOR: f64 = 1e-8;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters, `bins x (fft/2 + 1)`.
fn mel_filters(n_mels: usize, fft: usize) -> Array2<f64> {
    let sr = SAMPLE_RATE as f64;
    let n_bins = fft / 2 + 1;
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    Array2::from_shape_fn((n_mels, n_bins), |(m, k)| {
        let f = k as f64 * sr / fft as f64;
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= c {
            (f - lo) / (c - lo)
        } else {
            (hi - f) / (hi - c)
        }
    })
}

/// Random orthonormal matrix (Gram-Schmidt on a Gaussian draw).
fn orthonormal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((n, n), |_| StandardNormal.sample(rng));
    for j in 0..n {
        for i in 0..j {
            let d: f64 = m.column(i).dot(&m.column(j));
            let ci = m.column(i).to_owned();
            m.column_mut(j).scaled_add(-d, &ci);
        }
        let norm: f64 = m.column(j).dot(&m.column(j)).sqrt();
        m.column_mut(j).mapv_inplace(|v| v / norm);
    }
    m
}

/// Deterministic stand-in for a pretrained encoder: a 40-band log-mel
/// filterbank at 20 ms stride (layer 0) followed by `tanh` projections
/// through seeded orthonormal matrices (layers 1 to 3).
#[derive(Debug, Clone)]
pub struct ToyBackbone {
    filters: Array2<f64>,
    projections: Vec<ParamId>,
}

impl ToyBackbone {
    pub fn new(store: &mut ParamStore, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projections = (1..TOY_LAYERS)
            .map(|l| {
                store.add(
                    format!("backbone.proj{l}"),
                    ParamGroup::Backbone,
                    orthonormal(TOY_BINS, &mut rng),
                )
            })
            .collect();
        Self {
            filters: mel_filters(TOY_BINS, TOY_FFT),
            projections,
        }
    }

    /// Layer-0 features: scaled log mel energies, `round(N / 320)` frames.
    pub fn filterbank(&self, wave: &Waveform) -> Result<Array2<f64>> {
        wave.require_pipeline_rate()?;
        if wave.is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        let plan = StftPlan::new(SpectrogramGeometry {
            fft_size: TOY_FFT,
            hop: SAMPLES_PER_FRAME,
            window: WindowKind::Hann,
        })?;
        let spec = plan.analyze(wave.samples());
        let power = spec.mapv(|c| c.norm_sqr());
        let energies = power.dot(&self.filters.t());
        let frames = frames_for_samples(wave.len());
        let last = energies.nrows() - 1;
        Ok(Array2::from_shape_fn((frames, TOY_BINS), |(t, m)| {
            ((energies[[t.min(last), m]] + LOG_FLOOR).ln() + 6.0) / 6.0
        }))
    }

    /// Graph form of the stack for a time-major input of stacked
    /// filterbank rows.
    pub fn layers(&self, g: &mut Graph, store: &ParamStore, fbank: Var, trainable: bool) -> Vec<Var> {
        let mut out = vec![fbank];
        let mut x = fbank;
        for id in &self.projections {
            let p = g.param(store, *id, trainable);
            let y = g.matmul(x, p);
            x = g.tanh(y);
            out.push(x);
        }
        out
    }

    pub fn extract(&self, store: &ParamStore, wave: &Waveform) -> Result<FeatureStack> {
        let fb = self.filterbank(wave)?;
        let mut layers = vec![fb.clone()];
        let mut x = fb;
        for id in &self.projections {
            x = x.dot(&store.get(*id).value).mapv(f64::tanh);
            layers.push(x.clone());
        }
        FeatureStack::new(layers)
    }
}

/// The model's feature source.
#[derive(Clone)]
pub enum Backbone {
    Toy(ToyBackbone),
    External(Arc<dyn FeatureProvider>),
}

impl std::fmt::Debug for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backbone::Toy(_) => f.write_str("Backbone::Toy"),
            Backbone::External(p) => write!(f, "Backbone::External({})", p.name()),
        }
    }
}

impl Backbone {
    pub fn n_layers(&self) -> usize {
        match self {
            Backbone::Toy(_) => TOY_LAYERS,
            Backbone::External(p) => p.n_layers(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Backbone::Toy(_) => TOY_BINS,
            Backbone::External(p) => p.dim(),
        }
    }

    pub fn extract(&self, store: &ParamStore, wave: &Waveform) -> Result<FeatureStack> {
        match self {
            Backbone::Toy(t) => t.extract(store, wave),
            Backbone::External(p) => {
                let s = p.extract(wave)?;
                if s.n_layers() != p.n_layers() || s.dim() != p.dim() {
                    return Err(Error::InvalidInput(format!(
                        "provider {} returned {} layers of dim {}",
                        p.name(),
                        s.n_layers(),
                        s.dim()
                    )));
                }
                Ok(s)
            }
        }
    }

    /// Layer variables for a batch of equal-length signals, time-major
    /// (`frames * batch` rows), plus the frame count.
    pub fn batch_layers(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        waves: &[Waveform],
        trainable: bool,
    ) -> Result<(Vec<Var>, usize)> {
        let batch = waves.len();
        match self {
            Backbone::Toy(t) => {
                let fbs = waves.iter().map(|w| t.filterbank(w)).collect::<Result<Vec<_>>>()?;
                let frames = fbs[0].nrows();
                let x = interleave(&fbs, frames, batch);
                let v = g.constant(x);
                Ok((t.layers(g, store, v, trainable), frames))
            }
            Backbone::External(_) => {
                let stacks = waves.iter().map(|w| self.extract(store, w)).collect::<Result<Vec<_>>>()?;
                let frames = stacks.iter().map(|s| s.frames()).min().unwrap_or(0);
                let vars = (0..self.n_layers())
                    .map(|l| {
                        let per: Vec<Array2<f64>> = stacks.iter().map(|s| s.layers[l].clone()).collect();
                        g.constant(interleave(&per, frames, batch))
                    })
                    .collect();
                Ok((vars, frames))
            }
        }
    }
}

/// Stacks per-utterance `frames x d` matrices into time-major rows.
pub(crate) fn interleave(parts: &[Array2<f64>], frames: usize, batch: usize) -> Array2<f64> {
    let d = parts[0].ncols();
    let mut x = Array2::zeros((frames * batch, d));
    for (b, p) in parts.iter().enumerate() {
        for t in 0..frames {
            x.row_mut(t * batch + b).assign(&p.row(t));
        }
    }
    x
}

/// Inverse of [`interleave`].
pub(crate) fn deinterleave(x: &Array2<f64>, batch: usize) -> Vec<Array2<f64>> {
    let frames = x.nrows() / batch;
    (0..batch)
        .map(|b| {
            let rows: Vec<usize> = (0..frames).map(|t| t * batch + b).collect();
            x.select(Axis(0), &rows)
        })
        .collect()
}
