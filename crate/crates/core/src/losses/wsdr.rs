use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::signal::Waveform;

const EPS: f64 = 1e-8;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative cosine similarity `-<u,v> / sqrt(<u,u><v,v>)` and its gradient
/// with respect to `v`. Zero (with zero gradient) when either side has no
/// energy.
fn neg_cosine(u: &[f64], v: &[f64]) -> (f64, Vec<f64>) {
    let uu = dot(u, u);
    let vv = dot(v, v);
    let uv = dot(u, v);
    let d = (uu * vv).sqrt();
    if d <= EPS {
        return (0.0, vec![0.0; v.len()]);
    }
    let k = uv * uu / (d * d * d);
    let grad = u.iter().zip(v).map(|(ui, vi)| -ui / d + k * vi).collect();
    (-uv / d, grad)
}

/// Weighted SDR loss for one utterance and its gradient with respect to the
/// estimate.
///
/// With mixture `x`, clean `y` and estimate `e`:
/// `rho * s(y, e) + (1 - rho) * s(x - y, x - e)` where
/// `rho = |y|^2 / (|y|^2 + |x - y|^2)` and `s` is the negative cosine
/// similarity.
pub fn wsdr_terms(mixture: &[f64], clean: &[f64], est: &[f64]) -> (f64, Vec<f64>) {
    let noise: Vec<f64> = mixture.iter().zip(clean).map(|(x, y)| x - y).collect();
    let noise_est: Vec<f64> = mixture.iter().zip(est).map(|(x, e)| x - e).collect();
    let ey = dot(clean, clean);
    let en = dot(&noise, &noise);
    let rho = if ey + en > 0.0 { ey / (ey + en) } else { 0.0 };
    let (s1, g1) = neg_cosine(clean, est);
    let (s2, g2) = neg_cosine(&noise, &noise_est);
    // Written so that s1 == s2 gives back exactly s2.
    let value = s2 + rho * (s1 - s2);
    let grad = g1
        .iter()
        .zip(&g2)
        .map(|(a, b)| rho * a - (1.0 - rho) * b)
        .collect();
    (value, grad)
}

/// Batch-mean WSDR over the rows of `est` (B x N).
pub fn wsdr_graph(g: &mut Graph, mixture: &Array2<f64>, clean: &Array2<f64>, est: Var) -> Var {
    let e = g.value(est).clone();
    let batch = e.nrows();
    let mut total = 0.0;
    let mut grad = Array2::zeros(e.dim());
    for b in 0..batch {
        let (v, gr) = wsdr_terms(
            mixture.row(b).as_slice().expect("contiguous"),
            clean.row(b).as_slice().expect("contiguous"),
            e.row(b).as_slice().expect("contiguous"),
        );
        total += v;
        for (dst, src) in grad.row_mut(b).iter_mut().zip(gr) {
            *dst = src / batch as f64;
        }
    }
    g.fused_scalar(est, total / batch as f64, grad)
}

pub fn wsdr_loss(mixture: &Waveform, clean: &Waveform, enhanced: &Waveform) -> Result<f64> {
    let n = mixture.len();
    if clean.len() != n || enhanced.len() != n {
        return Err(Error::InvalidInput(format!(
            "length mismatch: mixture {n}, clean {}, enhanced {}",
            clean.len(),
            enhanced.len()
        )));
    }
    let speech = crate::signal::energy(clean.samples());
    let noise: f64 = mixture
        .samples()
        .iter()
        .zip(clean.samples())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    if speech + noise <= 0.0 {
        return Err(Error::DegenerateInput(
            "clean and noise components both have zero energy".into(),
        ));
    }
    Ok(wsdr_terms(mixture.samples(), clean.samples(), enhanced.samples()).0)
}
