use ndarray::Array2;
use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamGroup, ParamId, ParamStore};

/// Affine map applied to every row: `x W + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), group, (in_dim, out_dim), bound, rng);
        let b = store.add_uniform(format!("{name}.b"), group, (1, out_dim), bound, rng);
        Self { w, b, out_dim }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, trainable: bool) -> Var {
        let w = g.param(store, self.w, trainable);
        let b = g.param(store, self.b, trainable);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
struct GruDirection {
    w: ParamId,
    b: ParamId,
    u: ParamId,
    bu: ParamId,
}

impl GruDirection {
    fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w: store.add_uniform(format!("{name}.w"), group, (in_dim, 3 * hidden), bound, rng),
            b: store.add_uniform(format!("{name}.b"), group, (1, 3 * hidden), bound, rng),
            u: store.add_uniform(format!("{name}.u"), group, (hidden, 3 * hidden), bound, rng),
            bu: store.add_uniform(format!("{name}.bu"), group, (1, 3 * hidden), bound, rng),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        frames: usize,
        batch: usize,
        hidden: usize,
        reverse: bool,
        trainable: bool,
    ) -> Var {
        let w = g.param(store, self.w, trainable);
        let b = g.param(store, self.b, trainable);
        let u = g.param(store, self.u, trainable);
        let bu = g.param(store, self.bu, trainable);
        let xw = g.matmul(x, w);
        let xp = g.add_row(xw, b);
        let mut h = g.constant(Array2::zeros((batch, hidden)));
        let mut outs = vec![h; frames];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..frames).rev())
        } else {
            Box::new(0..frames)
        };
        for t in order {
            let xt = g.slice_rows(xp, t * batch, batch);
            h = g.gru_cell(xt, h, u, bu);
            outs[t] = h;
        }
        g.concat_rows(&outs)
    }
}

/// One bidirectional gated recurrent layer; output is `[forward | backward]`.
#[derive(Debug, Clone)]
pub struct BiGru {
    fwd: GruDirection,
    bwd: GruDirection,
    pub hidden: usize,
}

impl BiGru {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            fwd: GruDirection::new(store, &format!("{name}.fwd"), group, in_dim, hidden, rng),
            bwd: GruDirection::new(store, &format!("{name}.bwd"), group, in_dim, hidden, rng),
            hidden,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        frames: usize,
        batch: usize,
        trainable: bool,
    ) -> Var {
        let f = self
            .fwd
            .forward(g, store, x, frames, batch, self.hidden, false, trainable);
        let b = self
            .bwd
            .forward(g, store, x, frames, batch, self.hidden, true, trainable);
        g.concat_cols(&[f, b])
    }
}

/// Stack of bidirectional layers.
#[derive(Debug, Clone)]
pub struct BiGruStack {
    layers: Vec<BiGru>,
}

impl BiGruStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let d = if i == 0 { in_dim } else { 2 * hidden };
                BiGru::new(store, &format!("{name}.{i}"), group, d, hidden, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        mut x: Var,
        frames: usize,
        batch: usize,
        trainable: bool,
    ) -> Var {
        for layer in &self.layers {
            x = layer.forward(g, store, x, frames, batch, trainable);
        }
        x
    }
}
