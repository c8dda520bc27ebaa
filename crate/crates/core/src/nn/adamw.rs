use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::{ParamGroup, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    moments: HashMap<ParamId, (Array2<f64>, Array2<f64>)>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters in `frozen` groups are left untouched
    /// even when a gradient is supplied for them.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Array2<f64>)],
        lr: f64,
        frozen: &[ParamGroup],
    ) {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, g) in grads {
            let p = store.get_mut(*id);
            if frozen.contains(&p.group) {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(*id)
                .or_insert_with(|| (Array2::zeros(g.dim()), Array2::zeros(g.dim())));
            ndarray::Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|w, m, v, &g| {
                    *w -= lr * c.weight_decay * *w;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *w -= lr * mh / (vh.sqrt() + c.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = ParamStore::new();
        let id = s.add("w", ParamGroup::SeHead, array![[1.0, -2.0]]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut s, &[(id, array![[0.3, -5.0]])], 0.1, &[]);
        let w = &s.get(id).value;
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut s = ParamStore::new();
        let id = s.add("w", ParamGroup::SeHead, array![[2.0]]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut s, &[(id, array![[0.0]])], 0.5, &[]);
        assert!((s.get(id).value[[0, 0]] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn frozen_groups_untouched() {
        let mut s = ParamStore::new();
        let id = s.add("w", ParamGroup::Backbone, array![[1.0]]);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut s, &[(id, array![[1.0]])], 0.1, &[ParamGroup::Backbone]);
        assert_eq!(s.get(id).value[[0, 0]], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = ParamStore::new();
        let id = s.add("w", ParamGroup::SiHead, array![[3.0, -4.0]]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..2000 {
            let g = s.get(id).value.mapv(|w| 2.0 * (w - 1.0));
            opt.step(&mut s, &[(id, g)], 0.01, &[]);
        }
        for w in s.get(id).value.iter() {
            assert!((w - 1.0).abs() < 1e-2);
        }
    }
}
