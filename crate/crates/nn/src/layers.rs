//! Layers built from graph operations. Each layer registers its parameters
//! in a [`ParamStore`] under a name prefix and keeps only their ids.

use rand::Rng;

use crate::graph::{Graph, NodeId};
use crate::init::orthogonal;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::NnError;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), orthogonal(in_dim, out_dim, gain, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        if g.shape(x).1 != self.in_dim {
            return Err(NnError::shape("linear", g.shape(x), (self.in_dim, self.out_dim)));
        }
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(1, dim, 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(1, dim)),
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

/// Gated recurrent unit with reset, update and candidate gates laid out in
/// that order along the columns:
///
/// ```text
/// r  = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z  = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n  = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let gates = |rows: usize, rng: &mut dyn rand::RngCore| {
            let mut rng = rng;
            let blocks: Vec<Tensor> = (0..3).map(|_| orthogonal(rows, hidden, 1.0, &mut rng)).collect();
            let mut w = Tensor::zeros(rows, 3 * hidden);
            for (k, b) in blocks.iter().enumerate() {
                for r in 0..rows {
                    for c in 0..hidden {
                        w.set(r, k * hidden + c, b.get(r, c));
                    }
                }
            }
            w
        };
        let w_ih = gates(in_dim, rng);
        let w_hh = gates(hidden, rng);
        Self {
            w_ih: store.add(format!("{name}.w_ih"), w_ih),
            w_hh: store.add(format!("{name}.w_hh"), w_hh),
            b_ih: store.add(format!("{name}.b_ih"), Tensor::zeros(1, 3 * hidden)),
            b_hh: store.add(format!("{name}.b_hh"), Tensor::zeros(1, 3 * hidden)),
            in_dim,
            hidden,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w_ih, self.w_hh, self.b_ih, self.b_hh]
    }

    /// Input projection `x W_ih + b_ih` for every row at once.
    pub fn project_inputs(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId, NnError> {
        if g.shape(x).1 != self.in_dim {
            return Err(NnError::shape("gru input", g.shape(x), (self.in_dim, self.hidden)));
        }
        let w = g.param(store, self.w_ih);
        let b = g.param(store, self.b_ih);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    /// One step from an already projected input `gi` (`B x 3H`).
    pub fn step_projected(&self, g: &mut Graph, store: &ParamStore, gi: NodeId, h: NodeId) -> Result<NodeId, NnError> {
        let hd = self.hidden;
        if g.shape(h) != (g.shape(gi).0, hd) {
            return Err(NnError::shape("gru state", g.shape(h), (g.shape(gi).0, hd)));
        }
        let w = g.param(store, self.w_hh);
        let b = g.param(store, self.b_hh);
        let gh = g.matmul(h, w)?;
        let gh = g.add_bias(gh, b)?;
        let gi_rz = g.slice_cols(gi, 0, 2 * hd)?;
        let gh_rz = g.slice_cols(gh, 0, 2 * hd)?;
        let rz = g.add(gi_rz, gh_rz)?;
        let rz = g.sigmoid(rz);
        let r = g.slice_cols(rz, 0, hd)?;
        let z = g.slice_cols(rz, hd, hd)?;
        let gi_n = g.slice_cols(gi, 2 * hd, hd)?;
        let gh_n = g.slice_cols(gh, 2 * hd, hd)?;
        let rn = g.mul(r, gh_n)?;
        let n = g.add(gi_n, rn)?;
        let n = g.tanh(n);
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: NodeId, h: NodeId) -> Result<NodeId, NnError> {
        let gi = self.project_inputs(g, store, x)?;
        self.step_projected(g, store, gi, h)
    }

    /// Runs `steps` time steps over time-major rows `x` (`steps * B` rows)
    /// from `h0` (`B` rows). Returns every output row, time-major, and the
    /// final state.
    pub fn sequence(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        h0: NodeId,
        steps: usize,
    ) -> Result<(NodeId, NodeId), NnError> {
        let batch = g.shape(h0).0;
        if steps == 0 || g.shape(x).0 != steps * batch {
            return Err(NnError::shape("gru sequence", g.shape(x), (steps * batch, self.in_dim)));
        }
        let gi_all = self.project_inputs(g, store, x)?;
        let mut h = h0;
        let mut outputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let gi = g.slice_rows(gi_all, t * batch, batch)?;
            h = self.step_projected(g, store, gi, h)?;
            outputs.push(h);
        }
        let out = if steps == 1 { h } else { g.concat_rows(&outputs)? };
        Ok((out, h))
    }
}

/// Multi-head scaled dot-product attention among groups of rows.
///
/// Rows are processed in consecutive groups of `group` (one group per
/// environment step, one row per agent). Inputs are first mapped to shared
/// queries, keys and values, then each head applies its own projections,
/// attends within the group, and the concatenated head outputs are mapped
/// by `W^o`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    /// `(W^Q_j, W^K_j, W^V_j)` per head.
    pub heads: Vec<(ParamId, ParamId, ParamId)>,
    pub w_o: ParamId,
    pub dim: usize,
    pub head_dim: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub output: NodeId,
    /// Row-stochastic weights per head, `rows x group`.
    pub weights: Vec<NodeId>,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w_q = store.add(format!("{name}.w_q"), orthogonal(dim, dim, 1.0, rng));
        let w_k = store.add(format!("{name}.w_k"), orthogonal(dim, dim, 1.0, rng));
        let w_v = store.add(format!("{name}.w_v"), orthogonal(dim, dim, 1.0, rng));
        let heads = (0..heads)
            .map(|j| {
                (
                    store.add(format!("{name}.head{j}.w_q"), orthogonal(dim, head_dim, 1.0, rng)),
                    store.add(format!("{name}.head{j}.w_k"), orthogonal(dim, head_dim, 1.0, rng)),
                    store.add(format!("{name}.head{j}.w_v"), orthogonal(dim, head_dim, 1.0, rng)),
                )
            })
            .collect::<Vec<_>>();
        let w_o = store.add(
            format!("{name}.w_o"),
            orthogonal(heads.len() * head_dim, dim, 1.0, rng),
        );
        Self {
            w_q,
            w_k,
            w_v,
            heads,
            w_o,
            dim,
            head_dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = vec![self.w_q, self.w_k, self.w_v];
        for &(q, k, v) in &self.heads {
            out.extend([q, k, v]);
        }
        out.push(self.w_o);
        out
    }

    /// Shared query, key and value maps (no bias).
    pub fn qkv(&self, g: &mut Graph, store: &ParamStore, e: NodeId) -> Result<(NodeId, NodeId, NodeId), NnError> {
        if g.shape(e).1 != self.dim {
            return Err(NnError::shape("qkv_project", g.shape(e), (self.dim, self.dim)));
        }
        let mut out = [e; 3];
        for (slot, id) in out.iter_mut().zip([self.w_q, self.w_k, self.w_v]) {
            let w = g.param(store, id);
            *slot = g.matmul(e, w)?;
        }
        Ok((out[0], out[1], out[2]))
    }

    /// Attention over already projected `q`, `k`, `v`.
    pub fn attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        group: usize,
    ) -> Result<AttentionOutput, NnError> {
        let rows = g.shape(q).0;
        for x in [k, v] {
            if g.shape(x).0 != rows {
                return Err(NnError::shape("multi_head_attention", g.shape(q), g.shape(x)));
            }
        }
        if group == 0 || rows % group != 0 {
            return Err(NnError::shape("multi_head_attention", g.shape(q), (group, self.dim)));
        }
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut head_out = Vec::with_capacity(self.heads.len());
        let mut weights = Vec::with_capacity(self.heads.len());
        for &(wq, wk, wv) in &self.heads {
            let (wq, wk, wv) = (g.param(store, wq), g.param(store, wk), g.param(store, wv));
            let qj = g.matmul(q, wq)?;
            let kj = g.matmul(k, wk)?;
            let vj = g.matmul(v, wv)?;
            let scores = g.group_matmul_bt(qj, kj, group)?;
            let scores = g.scale(scores, scale);
            let w = g.softmax_rows(scores);
            head_out.push(g.group_matmul(w, vj, group)?);
            weights.push(w);
        }
        let concat = g.concat_cols(&head_out)?;
        let wo = g.param(store, self.w_o);
        let output = g.matmul(concat, wo)?;
        Ok(AttentionOutput { output, weights })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, e: NodeId, group: usize) -> Result<AttentionOutput, NnError> {
        let (q, k, v) = self.qkv(g, store, e)?;
        self.attend(g, store, q, k, v, group)
    }
}
