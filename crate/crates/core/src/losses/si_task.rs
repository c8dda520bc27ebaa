use ndarray::{Array2, ArrayView2};

use super::LossConfig;
use crate::error::{Error, Result};
use crate::nn::{Graph, Var};

/// Value, gradient and per-channel statistics of one inversion task loss.
#[derive(Debug, Clone)]
pub struct SiTaskTerms {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub pc: Vec<f64>,
    pub rmse: Vec<f64>,
}

/// `(1 - mean_c PC_c) + alpha * mean_c RMSE_c`, with correlation taken per
/// channel over all rows.
///
/// A channel whose correlation denominator `sqrt(Spp * Syy)` does not
/// exceed `eps` (for instance a constant target) contributes `PC = 0` and
/// no correlation gradient.
pub fn si_task_terms(pred: ArrayView2<f64>, target: ArrayView2<f64>, alpha: f64, eps: f64) -> SiTaskTerms {
    let (n, channels) = pred.dim();
    let nf = n as f64;
    let mut grad = Array2::zeros((n, channels));
    let mut pcs = Vec::with_capacity(channels);
    let mut rmses = Vec::with_capacity(channels);
    let cw = 1.0 / channels as f64;
    for c in 0..channels {
        let p = pred.column(c);
        let y = target.column(c);
        let pm = p.sum() / nf;
        let ym = y.sum() / nf;
        let mut spp = 0.0;
        let mut syy = 0.0;
        let mut spy = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            let a = p[i] - pm;
            let b = y[i] - ym;
            spp += a * a;
            syy += b * b;
            spy += a * b;
            let d = p[i] - y[i];
            sq += d * d;
        }
        let denom = (spp * syy).sqrt();
        let pc = if denom > eps { spy / denom } else { 0.0 };
        let rmse = (sq / nf).sqrt();
        for i in 0..n {
            let mut gi = 0.0;
            if denom > eps {
                let a = p[i] - pm;
                let b = y[i] - ym;
                gi -= cw * (b / denom - pc * a / spp);
            }
            if rmse > 0.0 {
                gi += alpha * cw * (p[i] - y[i]) / (nf * rmse);
            }
            grad[[i, c]] = gi;
        }
        pcs.push(pc);
        rmses.push(rmse);
    }
    let pc_avg = pcs.iter().sum::<f64>() * cw;
    let rmse_avg = rmses.iter().sum::<f64>() * cw;
    SiTaskTerms {
        loss: (1.0 - pc_avg) + alpha * rmse_avg,
        grad,
        pc: pcs,
        rmse: rmses,
    }
}

/// Graph version; returns the loss node and the per-channel statistics.
pub fn si_task_graph(g: &mut Graph, pred: Var, target: &Array2<f64>, cfg: &LossConfig) -> (Var, SiTaskTerms) {
    let terms = si_task_terms(g.value(pred).view(), target.view(), cfg.alpha_si, cfg.pc_epsilon);
    let v = g.fused_scalar(pred, terms.loss, terms.grad.clone());
    (v, terms)
}

pub fn si_task_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>, cfg: &LossConfig) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.nrows() < 2 {
        return Err(Error::InvalidInput("inversion loss needs at least 2 frames".into()));
    }
    if pred.ncols() == 0 {
        return Err(Error::InvalidInput("no channels".into()));
    }
    Ok(si_task_terms(pred, target, cfg.alpha_si, cfg.pc_epsilon).loss)
}
