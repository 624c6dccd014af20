use ndarray::Array2;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::rng::Rng;

/// Fully connected layer `x W + b`, `W` stored as in×out.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weight = store.insert_uniform(format!("{name}.weight"), (in_dim, out_dim), in_dim, rng);
        let bias = store.insert_uniform(format!("{name}.bias"), (1, out_dim), in_dim, rng);
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }

    pub fn n_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    /// Multiply–accumulates for `rows` input rows.
    pub fn macs(&self, rows: usize) -> usize {
        rows * self.in_dim * self.out_dim
    }
}

/// Gated attention pooling: scores `w·(tanh(hV) ⊙ sigmoid(hU))`, softmax
/// over rows, then the score-weighted sum of rows.
#[derive(Debug, Clone, Copy)]
pub struct GatedAttention {
    pub value: Linear,
    pub gate: Linear,
    pub score: Linear,
}

impl GatedAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        GatedAttention {
            value: Linear::new(store, &format!("{name}.attn_v"), dim, hidden, rng),
            gate: Linear::new(store, &format!("{name}.attn_u"), dim, hidden, rng),
            score: Linear::new(store, &format!("{name}.attn_w"), hidden, 1, rng),
        }
    }

    /// Attention weights (n×1) for the rows of `h`.
    pub fn weights<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, h: Var) -> Var {
        let v = self.value.forward(tape, store, h);
        let v = tape.tanh(v);
        let u = self.gate.forward(tape, store, h);
        let u = tape.sigmoid(u);
        let gated = tape.mul(v, u);
        let scores = self.score.forward(tape, store, gated);
        tape.softmax_cols(scores)
    }

    /// Pooled 1×dim vector.
    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, h: Var) -> Var {
        let a = self.weights(tape, store, h);
        let at = tape.transpose(a);
        tape.matmul(at, h)
    }

    pub fn n_params(&self) -> usize {
        self.value.n_params() + self.gate.n_params() + self.score.n_params()
    }

    /// MACs for pooling `rows` rows: both projections, the score layer,
    /// the gate product and the weighted sum.
    pub fn macs(&self, rows: usize) -> usize {
        self.value.macs(rows) + self.gate.macs(rows) + self.score.macs(rows) + rows * self.value.out_dim + rows * self.value.in_dim
    }
}

/// Converts bag features to an f64 matrix.
pub fn to_f64(x: &Array2<f32>) -> Array2<f64> {
    x.mapv(f64::from)
}
