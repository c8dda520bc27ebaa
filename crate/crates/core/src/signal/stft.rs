use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpectrogramGeometry {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for SpectrogramGeometry {
    fn default() -> Self {
        Self::canonical()
    }
}

impl SpectrogramGeometry {
    /// 400-point periodic Hann, 160-sample hop: 201 bins at 10 ms frames.
    pub const fn canonical() -> Self {
        Self {
            fft_size: 400,
            hop: 160,
            window: WindowKind::Hann,
        }
    }

    /// Hann window of `fft_size` with a quarter-window hop.
    pub const fn hann_quarter_hop(fft_size: usize) -> Self {
        Self {
            fft_size,
            hop: fft_size / 4,
            window: WindowKind::Hann,
        }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.fft_size / 2
    }

    /// Number of frames produced for a signal of `len` samples under
    /// centered framing.
    pub fn n_frames(&self, len: usize) -> usize {
        (len + 2 * self.pad() - self.fft_size) / self.hop + 1
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size;
        match self.window {
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_multiple_of(2) {
            return Err(Error::InvalidGeometry(format!(
                "fft_size must be even and >= 2, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 {
            return Err(Error::InvalidGeometry("hop must be positive".into()));
        }
        Ok(())
    }

    /// Nonzero overlap-add condition: the summed squared window is strictly
    /// positive at every phase of the hop.
    pub fn check_nola(&self) -> Result<()> {
        self.validate()?;
        let w = self.window();
        let mut min = f64::INFINITY;
        for phase in 0..self.hop {
            let s: f64 = w.iter().skip(phase).step_by(self.hop).map(|v| v * v).sum();
            min = min.min(s);
        }
        if min <= 1e-10 {
            return Err(Error::InvalidGeometry(format!(
                "NOLA violated for fft_size={} hop={} ({:?})",
                self.fft_size, self.hop, self.window
            )));
        }
        Ok(())
    }
}

/// One-sided complex spectrogram, frames x bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub geometry: SpectrogramGeometry,
    /// Length of the analysed signal, used to trim the inverse.
    pub signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|c| c.norm())
    }

    pub fn phase(&self) -> Array2<f64> {
        self.values.mapv(|c| c.arg())
    }
}

pub fn stft(wave: &Waveform, geometry: SpectrogramGeometry) -> Result<ComplexSpectrogram> {
    if wave.is_empty() {
        return Err(Error::InvalidInput("stft of an empty waveform".into()));
    }
    let plan = StftPlan::new(geometry)?;
    Ok(ComplexSpectrogram {
        values: plan.analyze(wave.samples()),
        geometry,
        signal_len: wave.len(),
    })
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    spec.geometry.check_nola()?;
    if spec.values.ncols() != spec.geometry.bins() {
        return Err(Error::InvalidInput(format!(
            "spectrogram has {} bins, geometry expects {}",
            spec.values.ncols(),
            spec.geometry.bins()
        )));
    }
    let plan = StftPlan::new(spec.geometry)?;
    let samples = plan.synthesize(spec.values.view(), spec.signal_len)?;
    Waveform::at_16k(samples)
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<usize, FftPair>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

type FftPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

fn fft_pair(n: usize) -> FftPair {
    PLANNER.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry(n)
            .or_insert_with(|| (planner.plan_fft_forward(n), planner.plan_fft_inverse(n)))
            .clone()
    })
}

/// Maps a possibly out-of-range index onto `[0, len)` by mirror reflection
/// about the first and last sample (edge samples are not repeated).
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Precomputed window and FFT plans for one geometry, with the forward
/// transforms and their adjoints used for backpropagation.
pub struct StftPlan {
    geometry: SpectrogramGeometry,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(geometry: SpectrogramGeometry) -> Result<Self> {
        geometry.validate()?;
        let (forward, inverse) = fft_pair(geometry.fft_size);
        Ok(Self {
            geometry,
            window: geometry.window(),
            forward,
            inverse,
        })
    }

    pub fn geometry(&self) -> SpectrogramGeometry {
        self.geometry
    }

    /// Centered, reflection-padded analysis of `x`.
    pub fn analyze(&self, x: &[f64]) -> Array2<Complex64> {
        let g = self.geometry;
        let n = g.fft_size;
        let frames = g.n_frames(x.len());
        let pad = g.pad() as isize;
        let mut out = Array2::zeros((frames, g.bins()));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            let start = (t * g.hop) as isize - pad;
            for (k, b) in buf.iter_mut().enumerate() {
                let v = x[reflect_index(start + k as isize, x.len())];
                *b = Complex64::new(v * self.window[k], 0.0);
            }
            self.forward.process(&mut buf);
            for (k, o) in out.row_mut(t).iter_mut().enumerate() {
                *o = buf[k];
            }
        }
        out
    }

    /// Adjoint of [`analyze`](Self::analyze): maps a gradient on the
    /// spectrum (`d/dRe + i d/dIm`) back to the signal of length `len`.
    pub fn analyze_adjoint(&self, grad: ArrayView2<Complex64>, len: usize) -> Vec<f64> {
        let g = self.geometry;
        let n = g.fft_size;
        let pad = g.pad() as isize;
        let mut out = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (t, row) in grad.outer_iter().enumerate() {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            for (k, v) in row.iter().enumerate() {
                buf[k] = *v;
            }
            self.inverse.process(&mut buf);
            let start = (t * g.hop) as isize - pad;
            for k in 0..n {
                out[reflect_index(start + k as isize, len)] += self.window[k] * buf[k].re;
            }
        }
        out
    }

    fn window_square_sum(&self, frames: usize) -> Vec<f64> {
        let g = self.geometry;
        let full = (frames - 1) * g.hop + g.fft_size;
        let mut wss = vec![0.0; full];
        for t in 0..frames {
            for (k, w) in self.window.iter().enumerate() {
                wss[t * g.hop + k] += w * w;
            }
        }
        wss
    }

    fn inverse_frame(&self, row: ndarray::ArrayView1<Complex64>, buf: &mut [Complex64]) {
        let n = self.geometry.fft_size;
        let half = n / 2;
        buf[0] = Complex64::new(row[0].re, 0.0);
        buf[half] = Complex64::new(row[half].re, 0.0);
        for k in 1..half {
            buf[k] = row[k];
            buf[n - k] = row[k].conj();
        }
        self.inverse.process(buf);
    }

    /// Weighted overlap-add inverse normalized by the summed squared window,
    /// trimmed to `len` samples.
    pub fn synthesize(&self, spec: ArrayView2<Complex64>, len: usize) -> Result<Vec<f64>> {
        let g = self.geometry;
        let n = g.fft_size;
        let frames = spec.nrows();
        if frames == 0 {
            return Ok(vec![0.0; len]);
        }
        let wss = self.window_square_sum(frames);
        let pad = g.pad();
        if pad + len > wss.len() {
            return Err(Error::InvalidInput(format!(
                "{frames} frames cannot cover {len} samples"
            )));
        }
        let mut acc = vec![0.0; wss.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for (t, row) in spec.outer_iter().enumerate() {
            self.inverse_frame(row, &mut buf);
            for k in 0..n {
                acc[t * g.hop + k] += self.window[k] * buf[k].re * scale;
            }
        }
        (0..len)
            .map(|m| {
                let d = wss[m + pad];
                if d <= 1e-10 {
                    Err(Error::InvalidGeometry(format!(
                        "window overlap vanishes at sample {m}"
                    )))
                } else {
                    Ok(acc[m + pad] / d)
                }
            })
            .collect()
    }

    /// Adjoint of [`synthesize`](Self::synthesize) for `frames` frames.
    pub fn synthesize_adjoint(&self, grad: &[f64], frames: usize) -> Array2<Complex64> {
        let g = self.geometry;
        let n = g.fft_size;
        let half = n / 2;
        let pad = g.pad();
        let wss = self.window_square_sum(frames);
        let mut ga = vec![0.0; wss.len()];
        for (m, v) in grad.iter().enumerate() {
            ga[m + pad] = v / wss[m + pad];
        }
        let mut out = Array2::zeros((frames, g.bins()));
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let scale = 1.0 / n as f64;
        for t in 0..frames {
            for k in 0..n {
                buf[k] = Complex64::new(self.window[k] * ga[t * g.hop + k], 0.0);
            }
            self.forward.process(&mut buf);
            let mut row = out.row_mut(t);
            for k in 0..=half {
                let c = if k == 0 || k == half { 1.0 } else { 2.0 };
                row[k] = buf[k] * (c * scale);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct DFT of one windowed frame, independent of rustfft.
    fn dft_frame(frame: &[f64]) -> Vec<Complex64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let th = -2.0 * PI * (k * i) as f64 / n as f64;
                        Complex64::new(x * th.cos(), x * th.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn canonical_geometry_has_201_bins() {
        let g = SpectrogramGeometry::canonical();
        assert_eq!(g.bins(), 201);
        g.check_nola().unwrap();
        assert_eq!(g.n_frames(16000), 101);
    }

    #[test]
    fn reflect_matches_numpy_convention() {
        let idx: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
    }

    #[test]
    fn empty_waveform_is_rejected() {
        let w = Waveform::at_16k(vec![]).unwrap();
        assert!(matches!(
            stft(&w, SpectrogramGeometry::canonical()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zero_waveform_gives_zero_spectrogram() {
        let s = stft(&Waveform::zeros(4000), SpectrogramGeometry::canonical()).unwrap();
        assert!(s.values.iter().all(|c| c.norm() == 0.0));
        let back = istft(&s).unwrap();
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frames_match_direct_dft() {
        let x = noise(3000, 3);
        let g = SpectrogramGeometry::canonical();
        let s = stft(&Waveform::at_16k(x.clone()).unwrap(), g).unwrap();
        let w = g.window();
        // Interior frame: no padding involved.
        let t = 5;
        let start = t * g.hop - g.pad();
        let frame: Vec<f64> = (0..g.fft_size).map(|k| x[start + k] * w[k]).collect();
        for (a, b) in dft_frame(&frame).iter().zip(s.values.row(t)) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn impulse_gives_flat_magnitude() {
        let g = SpectrogramGeometry::canonical();
        let mut x = vec![0.0; 4000];
        let t = 10;
        let offset = 150; // position of the impulse inside the frame
        x[t * g.hop - g.pad() + offset] = 1.0;
        let s = stft(&Waveform::at_16k(x).unwrap(), g).unwrap();
        let expected = g.window()[offset];
        for c in s.values.row(t) {
            assert!((c.norm() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_centred_sinusoid_concentrates_energy() {
        let g = SpectrogramGeometry::canonical();
        let k = 25;
        let f = k as f64 * 16000.0 / 400.0;
        let x: Vec<f64> = (0..8000)
            .map(|i| (2.0 * PI * f * i as f64 / 16000.0).cos())
            .collect();
        let s = stft(&Waveform::at_16k(x).unwrap(), g).unwrap();
        let row = s.values.row(20);
        // Periodic Hann: the bin-centred tone lands on bins k-1..=k+1 with
        // weights N/4, N/8, N/8 and exactly zero elsewhere.
        assert!((row[k].norm() - 100.0).abs() < 1e-8);
        assert!((row[k - 1].norm() - 50.0).abs() < 1e-8);
        assert!((row[k + 1].norm() - 50.0).abs() < 1e-8);
        for (j, c) in row.iter().enumerate() {
            if j + 1 < k || j > k + 1 {
                assert!(c.norm() < 1e-8, "bin {j} leaked {}", c.norm());
            }
        }
    }

    #[test]
    fn round_trip_reconstructs_random_signal() {
        let x = noise(16000, 11);
        let s = stft(&Waveform::at_16k(x.clone()).unwrap(), SpectrogramGeometry::canonical()).unwrap();
        let y = istft(&s).unwrap();
        assert_eq!(y.len(), x.len());
        let err = x
            .iter()
            .zip(y.samples())
            .skip(400)
            .take(16000 - 800)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max interior error {err}");
    }

    #[test]
    fn nola_violation_is_reported() {
        let g = SpectrogramGeometry {
            fft_size: 64,
            hop: 80,
            window: WindowKind::Hann,
        };
        assert!(matches!(g.check_nola(), Err(Error::InvalidGeometry(_))));
        let spec = ComplexSpectrogram {
            values: Array2::zeros((4, 33)),
            geometry: g,
            signal_len: 200,
        };
        assert!(matches!(istft(&spec), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn analyze_adjoint_is_the_transpose() {
        // <A x, g> == <x, A^T g> over the real inner product of (re, im).
        let g = SpectrogramGeometry::hann_quarter_hop(64);
        let plan = StftPlan::new(g).unwrap();
        let x = noise(300, 1);
        let ax = plan.analyze(&x);
        let gr = noise(ax.len() * 2, 2);
        let grad = Array2::from_shape_fn(ax.dim(), |(i, j)| {
            let o = 2 * (i * ax.ncols() + j);
            Complex64::new(gr[o], gr[o + 1])
        });
        let lhs: f64 = ax.iter().zip(grad.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        let atg = plan.analyze_adjoint(grad.view(), x.len());
        let rhs: f64 = x.iter().zip(&atg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn synthesize_adjoint_is_the_transpose() {
        let g = SpectrogramGeometry::hann_quarter_hop(64);
        let plan = StftPlan::new(g).unwrap();
        let len = 300;
        let frames = g.n_frames(len);
        let r = noise(frames * g.bins() * 2, 5);
        let spec = Array2::from_shape_fn((frames, g.bins()), |(i, j)| {
            let o = 2 * (i * g.bins() + j);
            Complex64::new(r[o], r[o + 1])
        });
        let y = plan.synthesize(spec.view(), len).unwrap();
        let gy = noise(len, 6);
        let lhs: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
        let adj = plan.synthesize_adjoint(&gy, frames);
        let rhs: f64 = spec.iter().zip(adj.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
