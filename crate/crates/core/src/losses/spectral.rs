use ndarray::Array2;

use super::{ComplexL1, LossConfig};
use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::signal::{SpectrogramGeometry, StftPlan, Waveform};

/// Clean-side spectra for a batch of reference signals (B x N), computed
/// once and reused by the spectral losses.
#[derive(Debug, Clone)]
pub struct SpectralTarget {
    batch: usize,
    len: usize,
    /// `log1p |Y|` on the canonical geometry, time-major.
    compressed: Array2<f64>,
    /// `[re | im]` per MRS resolution, time-major.
    multi: Vec<(SpectrogramGeometry, Array2<f64>)>,
}

fn spectra(clean: &Array2<f64>, geometry: SpectrogramGeometry) -> Array2<f64> {
    let mut g = Graph::new();
    let x = g.constant(clean.clone());
    let s = g.stft(x, geometry);
    g.value(s).clone()
}

impl SpectralTarget {
    pub fn new(clean: &Array2<f64>, cfg: &LossConfig) -> Result<Self> {
        let (batch, len) = clean.dim();
        if batch == 0 || len == 0 {
            return Err(Error::InvalidInput("empty reference batch".into()));
        }
        if len < cfg.largest_mrs_window() {
            return Err(Error::InvalidInput(format!(
                "signals of {len} samples are shorter than the largest MRS window {}",
                cfg.largest_mrs_window()
            )));
        }
        let canonical = SpectrogramGeometry::canonical();
        let bins = canonical.bins();
        let s = spectra(clean, canonical);
        let compressed = Array2::from_shape_fn((s.nrows(), bins), |(r, k)| {
            s[[r, k]].hypot(s[[r, bins + k]]).ln_1p()
        });
        let mut multi = Vec::with_capacity(cfg.mrs_fft_sizes.len());
        for &n in &cfg.mrs_fft_sizes {
            let geo = SpectrogramGeometry::hann_quarter_hop(n);
            StftPlan::new(geo)?;
            multi.push((geo, spectra(clean, geo)));
        }
        Ok(Self {
            batch,
            len,
            compressed,
            multi,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn check_shape(g: &Graph, est: Var, target: &SpectralTarget) {
    assert_eq!(
        g.value(est).dim(),
        (target.batch, target.len),
        "estimate shape must match the target batch"
    );
}

/// Mean absolute difference of compressed magnitudes on the canonical
/// geometry.
pub fn cms_graph(g: &mut Graph, est: Var, target: &SpectralTarget) -> Var {
    check_shape(g, est, target);
    let geo = SpectrogramGeometry::canonical();
    let bins = geo.bins();
    let s = g.stft(est, geo);
    let re = g.slice_cols(s, 0, bins);
    let im = g.slice_cols(s, bins, bins);
    let mag = g.magnitude(re, im);
    let c = g.log1p(mag);
    let y = g.constant(target.compressed.clone());
    let d = g.sub(y, c);
    let a = g.abs(d);
    g.mean_all(a)
}

/// Complex L1 distance averaged over time-frequency cells, then over
/// resolutions.
pub fn mrs_graph(g: &mut Graph, est: Var, target: &SpectralTarget, mode: ComplexL1) -> Var {
    check_shape(g, est, target);
    let mut terms = Vec::with_capacity(target.multi.len());
    for (geo, y) in &target.multi {
        let bins = geo.bins();
        let s = g.stft(est, *geo);
        let yc = g.constant(y.clone());
        let d = g.sub(s, yc);
        let cells = (y.nrows() * bins) as f64;
        let term = match mode {
            ComplexL1::Componentwise => {
                let a = g.abs(d);
                let sum = g.sum_all(a);
                g.scale(sum, 1.0 / cells)
            }
            ComplexL1::Modulus => {
                let re = g.slice_cols(d, 0, bins);
                let im = g.slice_cols(d, bins, bins);
                let m = g.magnitude(re, im);
                g.mean_all(m)
            }
        };
        terms.push(term);
    }
    let mut total = terms[0];
    for t in &terms[1..] {
        total = g.add(total, *t);
    }
    g.scale(total, 1.0 / terms.len() as f64)
}

fn pair(clean: &Waveform, est: &Waveform) -> Result<(Array2<f64>, Array2<f64>)> {
    clean.require_pipeline_rate()?;
    est.require_pipeline_rate()?;
    if clean.len() != est.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} vs {}",
            clean.len(),
            est.len()
        )));
    }
    let row = |w: &Waveform| Array2::from_shape_vec((1, w.len()), w.samples().to_vec()).expect("row");
    Ok((row(clean), row(est)))
}

pub fn cms_loss(clean: &Waveform, est: &Waveform) -> Result<f64> {
    let (y, e) = pair(clean, est)?;
    let cfg = LossConfig {
        mrs_fft_sizes: vec![4],
        ..Default::default()
    };
    let target = SpectralTarget::new(&y, &cfg)?;
    let mut g = Graph::new();
    let ev = g.constant(e);
    let v = cms_graph(&mut g, ev, &target);
    Ok(g.scalar(v))
}

pub fn mrs_loss(clean: &Waveform, est: &Waveform, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let (y, e) = pair(clean, est)?;
    let target = SpectralTarget::new(&y, cfg)?;
    let mut g = Graph::new();
    let ev = g.constant(e);
    let v = mrs_graph(&mut g, ev, &target, cfg.complex_l1);
    Ok(g.scalar(v))
}
