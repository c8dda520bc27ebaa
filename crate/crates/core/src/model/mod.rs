//! The shared-backbone model: layer-weighted backbone features feeding a
//! spectral masking enhancement head and a two-branch inversion head.

mod backbone;
mod checkpoint;

pub use backbone::{
    weighted_sum, Backbone, FeatureProvider, FeatureStack, LayerWeights, ToyBackbone, FEATURE_STRIDE_S,
    TOY_BINS, TOY_LAYERS,
};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_with_provider, read_checkpoint_header, save_checkpoint, CheckpointHeader,
    PreprocessorRef, CHECKPOINT_MAGIC,
};
pub(crate) use backbone::{deinterleave, interleave};

use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{hex, BiGruStack, Dense, Graph, ParamGroup, ParamId, ParamStore, Var};
use crate::scenario::Scenario;
use crate::seed::{rng_for, tag};
use crate::signal::{compress, CompressedMagnitude, SpectrogramGeometry, StftPlan, Waveform};
use crate::track::{ArticulatoryTrack, N_CHANNELS, ORAL_CHANNELS, SOURCE_CHANNELS, TRACK_FRAME_RATE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackboneConfig {
    #[default]
    Toy,
    /// Features come from a [`FeatureProvider`] supplied at construction.
    External { name: String, n_layers: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub geometry: SpectrogramGeometry,
    pub backbone: BackboneConfig,
    pub se_hidden: usize,
    pub se_depth: usize,
    pub si_hidden: usize,
    pub si_depth: usize,
    /// One layer-weight vector for both heads instead of one each.
    pub share_layer_weights: bool,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            geometry: SpectrogramGeometry::canonical(),
            backbone: BackboneConfig::Toy,
            se_hidden: 256,
            se_depth: 2,
            si_hidden: 256,
            si_depth: 2,
            share_layer_weights: false,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.geometry.check_nola()?;
        if self.se_hidden == 0 || self.si_hidden == 0 || self.se_depth == 0 || self.si_depth == 0 {
            return Err(Error::InvalidInput("hidden sizes and depths must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

/// Which heads a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSet {
    pub se: bool,
    pub si: bool,
}

impl HeadSet {
    pub fn for_scenario(s: Scenario) -> Self {
        match s {
            Scenario::SeBase => HeadSet { se: true, si: false },
            Scenario::SiO | Scenario::SiseP => HeadSet { se: false, si: true },
            Scenario::SiseM => HeadSet { se: true, si: true },
        }
    }
}

/// Per-channel standardization applied to track targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TrackNorm {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; N_CHANNELS],
            std: vec![1.0; N_CHANNELS],
        }
    }

    /// Statistics over all frames of `tracks`; near-constant channels keep
    /// unit scale.
    pub fn fit<'a>(tracks: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let mut n = 0.0;
        let mut s = [0.0; N_CHANNELS];
        let mut ss = [0.0; N_CHANNELS];
        for t in tracks {
            for row in t.outer_iter() {
                n += 1.0;
                for c in 0..N_CHANNELS {
                    s[c] += row[c];
                    ss[c] += row[c] * row[c];
                }
            }
        }
        if n < 2.0 {
            return Err(Error::InvalidInput("need at least two frames to fit normalization".into()));
        }
        let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
        let std = (0..N_CHANNELS)
            .map(|c| {
                let var = (ss[c] / n - mean[c] * mean[c]).max(0.0);
                if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.outer_iter_mut() {
            for c in 0..N_CHANNELS {
                row[c] = (row[c] - self.mean[c]) / self.std[c];
            }
        }
        y
    }

    pub fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.outer_iter_mut() {
            for c in 0..N_CHANNELS {
                row[c] = row[c] * self.std[c] + self.mean[c];
            }
        }
        y
    }
}

#[derive(Debug, Clone)]
struct SeHead {
    rnn: BiGruStack,
    out: Dense,
    skip: Dense,
}

#[derive(Debug, Clone)]
struct SiHead {
    rnn_a: BiGruStack,
    out_a: Dense,
    rnn_b: BiGruStack,
    out_b: Dense,
}

/// Switches for one batched forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub se: bool,
    pub si: bool,
    /// Record trainable parameters (backbone only when not frozen).
    pub train: bool,
    /// Replace the predicted mask with this constant.
    pub mask_override: Option<f64>,
}

/// Graph handles produced by [`SiseModel::forward`].
#[derive(Debug, Clone, Copy)]
pub struct BatchForward {
    /// `stft_frames * batch` rows of mask values.
    pub mask: Option<Var>,
    /// `batch x len` enhanced signals.
    pub enhanced: Option<Var>,
    /// `feature_frames * batch` rows of 10 normalized track channels.
    pub tracks: Option<Var>,
    pub stft_frames: usize,
    pub feature_frames: usize,
}

/// Output of the enhancement path for one utterance.
#[derive(Debug, Clone)]
pub struct SeOutput {
    pub enhanced: Waveform,
    /// `frames x bins`, every value in `(0, 1)`.
    pub mask: Array2<f64>,
    pub compressed_noisy: CompressedMagnitude,
}

#[derive(Debug, Clone)]
pub struct SiseModel {
    pub config: ModelConfig,
    pub heads: HeadSet,
    pub store: ParamStore,
    backbone: Backbone,
    lw_se: Option<ParamId>,
    lw_si: Option<ParamId>,
    se_head: Option<SeHead>,
    si_head: Option<SiHead>,
    pub backbone_frozen: bool,
    pub track_norm: TrackNorm,
    pub stage: u8,
    pub seed: u64,
    pub scenario: Option<Scenario>,
    /// Enhancement model applied before this one (SISE-P).
    pub preprocessor: Option<PreprocessorRef>,
}

impl SiseModel {
    pub fn new(config: ModelConfig, heads: HeadSet) -> Result<Self> {
        Self::with_provider(config, heads, None)
    }

    pub fn with_provider(
        config: ModelConfig,
        heads: HeadSet,
        provider: Option<Arc<dyn FeatureProvider>>,
    ) -> Result<Self> {
        config.validate()?;
        if !heads.se && !heads.si {
            return Err(Error::InvalidInput("a model needs at least one head".into()));
        }
        let mut store = ParamStore::new();
        let backbone = match (&config.backbone, provider) {
            (BackboneConfig::Toy, _) => {
                Backbone::Toy(ToyBackbone::new(&mut store, crate::seed::derive_seed(config.init_seed, &[tag("backbone")])))
            }
            (BackboneConfig::External { name, n_layers, dim }, Some(p)) => {
                if p.name() != name || p.n_layers() != *n_layers || p.dim() != *dim {
                    return Err(Error::InvalidInput(format!(
                        "provider {} ({} x {}) does not match configured {name} ({n_layers} x {dim})",
                        p.name(),
                        p.n_layers(),
                        p.dim()
                    )));
                }
                Backbone::External(p)
            }
            (BackboneConfig::External { name, .. }, None) => {
                return Err(Error::InvalidInput(format!("no feature provider for backbone {name}")));
            }
        };
        let n_layers = backbone.n_layers();
        let dim = backbone.dim();
        let bins = config.geometry.bins();
        let lw = |store: &mut ParamStore, name: &str| {
            store.add(name, ParamGroup::LayerWeights, Array2::zeros((1, n_layers)))
        };
        let (lw_se, lw_si) = if config.share_layer_weights {
            let id = lw(&mut store, "layer_weights.shared");
            (heads.se.then_some(id), heads.si.then_some(id))
        } else {
            (
                heads.se.then(|| lw(&mut store, "layer_weights.se")),
                heads.si.then(|| lw(&mut store, "layer_weights.si")),
            )
        };
        let se_head = heads.se.then(|| {
            let mut rng = rng_for(config.init_seed, &[tag("se-head")]);
            let g = ParamGroup::SeHead;
            let rnn = BiGruStack::new(&mut store, "se.rnn", g, dim + bins, config.se_hidden, config.se_depth, &mut rng);
            let out = Dense::new(&mut store, "se.out", g, rnn.out_dim(), bins, &mut rng);
            let skip = Dense::new(&mut store, "se.skip", g, dim, bins, &mut rng);
            SeHead { rnn, out, skip }
        });
        let si_head = heads.si.then(|| {
            let mut rng = rng_for(config.init_seed, &[tag("si-head")]);
            let g = ParamGroup::SiHead;
            let (h, d) = (config.si_hidden, config.si_depth);
            let rnn_a = BiGruStack::new(&mut store, "si.a.rnn", g, dim, h, d, &mut rng);
            let out_a = Dense::new(&mut store, "si.a.out", g, rnn_a.out_dim(), ORAL_CHANNELS.len(), &mut rng);
            let rnn_b = BiGruStack::new(&mut store, "si.b.rnn", g, dim, h, d, &mut rng);
            let out_b = Dense::new(&mut store, "si.b.out", g, rnn_b.out_dim(), SOURCE_CHANNELS.len(), &mut rng);
            SiHead {
                rnn_a,
                out_a,
                rnn_b,
                out_b,
            }
        });
        Ok(Self {
            config,
            heads,
            store,
            backbone,
            lw_se,
            lw_si,
            se_head,
            si_head,
            backbone_frozen: true,
            track_norm: TrackNorm::identity(),
            stage: 0,
            seed: 0,
            scenario: None,
            preprocessor: None,
        })
    }

    pub fn for_scenario(config: ModelConfig, scenario: Scenario) -> Result<Self> {
        let mut m = Self::new(config, HeadSet::for_scenario(scenario))?;
        m.scenario = Some(scenario);
        Ok(m)
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    /// Groups the optimizer must leave untouched.
    pub fn frozen_groups(&self) -> Vec<ParamGroup> {
        if self.backbone_frozen {
            vec![ParamGroup::Backbone]
        } else {
            Vec::new()
        }
    }

    pub fn param_digest(&self) -> String {
        self.store.digest(&[])
    }

    pub fn layer_weights_se(&self) -> Option<LayerWeights> {
        self.lw_se.map(|id| self.layer_weights(id))
    }

    pub fn layer_weights_si(&self) -> Option<LayerWeights> {
        self.lw_si.map(|id| self.layer_weights(id))
    }

    fn layer_weights(&self, id: ParamId) -> LayerWeights {
        LayerWeights {
            logits: self.store.get(id).value.row(0).to_vec(),
        }
    }

    /// Ids of every parameter belonging to the named inversion branch
    /// (`'a'` oral, `'b'` velum and source).
    pub fn si_branch_params(&self, branch: char) -> Vec<ParamId> {
        let prefix = format!("si.{branch}.");
        self.store
            .iter()
            .filter(|(_, p)| p.name.starts_with(&prefix))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn extract_features(&self, wave: &Waveform) -> Result<FeatureStack> {
        self.backbone.extract(&self.store, wave)
    }

    fn check_inputs(&self, waves: &[Waveform]) -> Result<usize> {
        let first = waves.first().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let len = first.len();
        for w in waves {
            w.require_pipeline_rate()?;
            if w.len() != len {
                return Err(Error::InvalidInput("batch members differ in length".into()));
            }
        }
        if len < self.config.geometry.fft_size {
            return Err(Error::InvalidInput(format!(
                "{len} samples is shorter than one analysis frame ({})",
                self.config.geometry.fft_size
            )));
        }
        Ok(len)
    }

    /// Batched forward pass over equal-length waveforms.
    pub fn forward(&self, g: &mut Graph, waves: &[Waveform], opts: ForwardOptions) -> Result<BatchForward> {
        let len = self.check_inputs(waves)?;
        let batch = waves.len();
        let se = opts.se && self.se_head.is_some();
        let si = opts.si && self.si_head.is_some();
        if opts.se && !se || opts.si && !si {
            return Err(Error::InvalidState("requested head is not part of this model".into()));
        }
        let bb_train = opts.train && !self.backbone_frozen;
        let (layers, feature_frames) = self.backbone.batch_layers(g, &self.store, waves, bb_train)?;
        let mix = |g: &mut Graph, id: ParamId| {
            let logits = g.param(&self.store, id, opts.train);
            let w = g.softmax(logits);
            g.weighted_sum(w, &layers)
        };
        let geo = self.config.geometry;
        let stft_frames = geo.n_frames(len);
        let mut out = BatchForward {
            mask: None,
            enhanced: None,
            tracks: None,
            stft_frames,
            feature_frames,
        };
        if se {
            let head = self.se_head.as_ref().expect("checked");
            let feats = mix(g, self.lw_se.expect("se weights"));
            let index: Vec<usize> = (0..stft_frames)
                .flat_map(|t| {
                    let src = (t / 2).min(feature_frames - 1);
                    (0..batch).map(move |b| src * batch + b)
                })
                .collect();
            let up = g.gather_rows(feats, index);
            let plan = StftPlan::new(geo)?;
            let bins = geo.bins();
            let rows = stft_frames * batch;
            let mut comp = Array2::zeros((rows, bins));
            let mut cos = Array2::zeros((rows, bins));
            let mut sin = Array2::zeros((rows, bins));
            for (b, w) in waves.iter().enumerate() {
                let spec = plan.analyze(w.samples());
                for t in 0..stft_frames {
                    for k in 0..bins {
                        let c = spec[[t, k]];
                        let r = t * batch + b;
                        let m = c.norm();
                        comp[[r, k]] = m.ln_1p();
                        let (s, co) = if m > 0.0 { (c.im / m, c.re / m) } else { (0.0, 1.0) };
                        cos[[r, k]] = co;
                        sin[[r, k]] = s;
                    }
                }
            }
            let comp_v = g.constant(comp);
            let mask = match opts.mask_override {
                Some(v) => g.constant(Array2::from_elem((rows, bins), v)),
                None => {
                    let x = g.concat_cols(&[up, comp_v]);
                    let h = head.rnn.forward(g, &self.store, x, stft_frames, batch, opts.train);
                    let z1 = head.out.forward(g, &self.store, h, opts.train);
                    let z2 = head.skip.forward(g, &self.store, up, opts.train);
                    let z = g.add(z1, z2);
                    g.sigmoid(z)
                }
            };
            let masked = g.mul(mask, comp_v);
            let mag = g.expm1(masked);
            let cv = g.constant(cos);
            let sv = g.constant(sin);
            let re = g.mul(mag, cv);
            let im = g.mul(mag, sv);
            let spec = g.concat_cols(&[re, im]);
            out.enhanced = Some(g.istft(spec, geo, batch, len));
            out.mask = Some(mask);
        }
        if si {
            let head = self.si_head.as_ref().expect("checked");
            let feats = mix(g, self.lw_si.expect("si weights"));
            let ha = head.rnn_a.forward(g, &self.store, feats, feature_frames, batch, opts.train);
            let ya = head.out_a.forward(g, &self.store, ha, opts.train);
            let hb = head.rnn_b.forward(g, &self.store, feats, feature_frames, batch, opts.train);
            let yb = head.out_b.forward(g, &self.store, hb, opts.train);
            out.tracks = Some(g.concat_cols(&[ya, yb]));
        }
        Ok(out)
    }

    /// Enhancement path for one utterance.
    pub fn se_forward(&self, noisy: &Waveform) -> Result<SeOutput> {
        self.se_forward_with(noisy, None)
    }

    /// Like [`se_forward`](Self::se_forward) with an optional constant mask
    /// in place of the predicted one.
    pub fn se_forward_with(&self, noisy: &Waveform, mask_override: Option<f64>) -> Result<SeOutput> {
        if self.se_head.is_none() {
            return Err(Error::InvalidState("model has no enhancement head".into()));
        }
        let mut g = Graph::new();
        let waves = std::slice::from_ref(noisy);
        let f = self.forward(
            &mut g,
            waves,
            ForwardOptions {
                se: true,
                mask_override,
                ..Default::default()
            },
        )?;
        let enhanced = Waveform::at_16k(g.value(f.enhanced.expect("se")).row(0).to_vec())?;
        let mask = g.value(f.mask.expect("se")).clone();
        let geo = self.config.geometry;
        let spec = StftPlan::new(geo)?.analyze(noisy.samples());
        let compressed_noisy = compress(spec.mapv(|c| c.norm()).view(), geo)?;
        Ok(SeOutput {
            enhanced,
            mask,
            compressed_noisy,
        })
    }

    /// Enhances equal-length signals in one pass.
    pub fn enhance_batch(&self, waves: &[Waveform]) -> Result<Vec<Waveform>> {
        let mut g = Graph::new();
        let f = self.forward(
            &mut g,
            waves,
            ForwardOptions {
                se: true,
                ..Default::default()
            },
        )?;
        g.value(f.enhanced.expect("se"))
            .outer_iter()
            .map(|r| Waveform::at_16k(r.to_vec()))
            .collect()
    }

    /// Predicted track in physical units.
    pub fn si_forward(&self, wave: &Waveform) -> Result<ArticulatoryTrack> {
        if self.si_head.is_none() {
            return Err(Error::InvalidState("model has no inversion head".into()));
        }
        let mut g = Graph::new();
        let f = self.forward(
            &mut g,
            std::slice::from_ref(wave),
            ForwardOptions {
                si: true,
                ..Default::default()
            },
        )?;
        let y = self.track_norm.denormalize(g.value(f.tracks.expect("si")));
        ArticulatoryTrack::new(y, TRACK_FRAME_RATE)
    }
}

/// Splits a time-major `frames * batch` matrix into per-utterance rows.
pub fn split_batch(x: &Array2<f64>, batch: usize) -> Vec<Array2<f64>> {
    deinterleave(x, batch)
}

/// Mean of each column.
pub fn column_means(x: &Array2<f64>) -> Vec<f64> {
    x.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}
