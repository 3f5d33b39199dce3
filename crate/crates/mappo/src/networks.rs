//! Actor and critic networks.
//!
//! Every forward pass takes time-major rows: `steps` blocks of `B` rows,
//! where `B` is a whole number of environments times `n_agents`, and the
//! agents of one environment step are consecutive. Recurrent states are
//! `B x hidden`.

use rand::Rng;
use tending_core::NUM_ACTIONS;
use tending_nn::{Graph, Gru, LayerNorm, Linear, MultiHeadAttention, NnError, NodeId, ParamId, ParamStore};

use crate::config::{CriticVariant, NetworkConfig};

/// FC layers (tanh, layer norm) followed by a GRU, layer norm and linear head.
#[derive(Debug, Clone)]
pub struct RecurrentTrunk {
    pub layers: Vec<(Linear, LayerNorm)>,
    pub gru: Gru,
    pub gru_norm: LayerNorm,
    pub head: Linear,
}

impl RecurrentTrunk {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        depth: usize,
        out_dim: usize,
        head_gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        // Recommended orthogonal gain for tanh.
        let gain = 5.0 / 3.0;
        let mut layers = Vec::with_capacity(depth);
        let mut width = in_dim;
        for l in 0..depth {
            let fc = Linear::new(store, &format!("{name}.fc{l}"), width, hidden, true, gain, rng);
            let norm = LayerNorm::new(store, &format!("{name}.fc{l}_norm"), hidden);
            layers.push((fc, norm));
            width = hidden;
        }
        let gru = Gru::new(store, &format!("{name}.gru"), width, hidden, rng);
        let gru_norm = LayerNorm::new(store, &format!("{name}.gru_norm"), hidden);
        let head = Linear::new(store, &format!("{name}.head"), hidden, out_dim, true, head_gain, rng);
        Self {
            layers,
            gru,
            gru_norm,
            head,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        h0: NodeId,
        steps: usize,
    ) -> Result<(NodeId, NodeId), NnError> {
        let mut x = x;
        for (fc, norm) in &self.layers {
            let y = fc.forward(g, store, x)?;
            let y = g.tanh(y);
            x = norm.forward(g, store, y)?;
        }
        let (seq, h) = self.gru.sequence(g, store, x, h0, steps)?;
        let seq = self.gru_norm.forward(g, store, seq)?;
        let out = self.head.forward(g, store, seq)?;
        Ok((out, h))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for (fc, norm) in &self.layers {
            out.extend(fc.params());
            out.extend(norm.params());
        }
        out.extend(self.gru.params());
        out.extend(self.gru_norm.params());
        out.extend(self.head.params());
        out
    }
}

/// Shared-parameter policy over one agent's local observation.
#[derive(Debug, Clone)]
pub struct Actor {
    pub trunk: RecurrentTrunk,
    pub obs_dim: usize,
}

impl Actor {
    pub fn new(store: &mut ParamStore, obs_dim: usize, cfg: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let trunk = RecurrentTrunk::new(
            store,
            "actor",
            obs_dim,
            cfg.hidden_dim,
            cfg.actor_layers,
            NUM_ACTIONS,
            cfg.actor_head_gain,
            rng,
        );
        Self { trunk, obs_dim }
    }

    /// Logits (`steps * B x 5`) and the final recurrent state.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        obs: NodeId,
        h0: NodeId,
        steps: usize,
    ) -> Result<(NodeId, NodeId), NnError> {
        self.trunk.forward(g, store, obs, h0, steps)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.trunk.params()
    }
}

/// Concatenates the `n` consecutive rows of each group and repeats the
/// result for every row of the group: `rows x (n * cols)`.
pub fn group_flatten(g: &mut Graph, x: NodeId, n: usize) -> Result<NodeId, NnError> {
    let (rows, cols) = g.shape(x);
    if n == 0 || rows % n != 0 {
        return Err(NnError::Shape {
            op: "group_flatten",
            left: (rows, cols),
            right: (n, cols),
        });
    }
    let flat = g.reshape(x, rows / n, n * cols)?;
    if n == 1 {
        return Ok(flat);
    }
    let index: Vec<usize> = (0..rows).map(|r| r / n).collect();
    g.gather_rows(flat, &index)
}

/// Centralized value function: MLP and GRU over the agent's own observation
/// concatenated with every agent's observation.
#[derive(Debug, Clone)]
pub struct PlainCritic {
    pub trunk: RecurrentTrunk,
}

/// Centralized value function with the attention encoder: a shared affine
/// encoding, multi-head attention across the agents of one step, then the
/// flattened attention output joined with the observations.
#[derive(Debug, Clone)]
pub struct AttentionCritic {
    pub encoder: Linear,
    pub attention: MultiHeadAttention,
    pub trunk: RecurrentTrunk,
    pub concat_all_observations: bool,
}

/// Output of a critic forward pass.
#[derive(Debug, Clone)]
pub struct CriticOutput {
    /// `steps * B x 1`.
    pub values: NodeId,
    pub h_final: NodeId,
    /// Attention block output before flattening, when the variant has one.
    pub attention: Option<NodeId>,
}

#[derive(Debug, Clone)]
pub enum Critic {
    Plain(PlainCritic),
    Attention(AttentionCritic),
}

impl Critic {
    pub fn new(
        store: &mut ParamStore,
        variant: CriticVariant,
        obs_dim: usize,
        n_agents: usize,
        cfg: &NetworkConfig,
        rng: &mut impl Rng,
    ) -> Self {
        match variant {
            CriticVariant::Plain => {
                let in_dim = obs_dim * (n_agents + 1);
                let trunk = RecurrentTrunk::new(store, "critic", in_dim, cfg.hidden_dim, cfg.critic_layers, 1, 1.0, rng);
                Critic::Plain(PlainCritic { trunk })
            }
            CriticVariant::Attention => {
                let encoder = Linear::new(store, "critic.encoder", obs_dim, cfg.embed_dim, true, 1.0, rng);
                let attention = MultiHeadAttention::new(store, "critic.attention", cfg.embed_dim, cfg.heads, cfg.head_dim, rng);
                let obs_part = if cfg.concat_all_observations { obs_dim * n_agents } else { obs_dim };
                let in_dim = cfg.embed_dim * n_agents + obs_part;
                let trunk = RecurrentTrunk::new(store, "critic", in_dim, cfg.hidden_dim, cfg.critic_layers, 1, 1.0, rng);
                Critic::Attention(AttentionCritic {
                    encoder,
                    attention,
                    trunk,
                    concat_all_observations: cfg.concat_all_observations,
                })
            }
        }
    }

    pub fn variant(&self) -> CriticVariant {
        match self {
            Critic::Plain(_) => CriticVariant::Plain,
            Critic::Attention(_) => CriticVariant::Attention,
        }
    }

    pub fn trunk(&self) -> &RecurrentTrunk {
        match self {
            Critic::Plain(c) => &c.trunk,
            Critic::Attention(c) => &c.trunk,
        }
    }

    /// One value per row. `obs` rows are grouped by `n_agents` as described
    /// in the module docs.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        obs: NodeId,
        h0: NodeId,
        steps: usize,
        n_agents: usize,
    ) -> Result<CriticOutput, NnError> {
        match self {
            Critic::Plain(c) => {
                let all = group_flatten(g, obs, n_agents)?;
                let x = g.concat_cols(&[obs, all])?;
                let (values, h_final) = c.trunk.forward(g, store, x, h0, steps)?;
                Ok(CriticOutput {
                    values,
                    h_final,
                    attention: None,
                })
            }
            Critic::Attention(c) => {
                let e = c.encoder.forward(g, store, obs)?;
                let m_out = c.attention.forward(g, store, e, n_agents)?.output;
                let flat = group_flatten(g, m_out, n_agents)?;
                let observed = if c.concat_all_observations {
                    group_flatten(g, obs, n_agents)?
                } else {
                    obs
                };
                let x = g.concat_cols(&[flat, observed])?;
                let (values, h_final) = c.trunk.forward(g, store, x, h0, steps)?;
                Ok(CriticOutput {
                    values,
                    h_final,
                    attention: Some(m_out),
                })
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Critic::Plain(c) => c.trunk.params(),
            Critic::Attention(c) => {
                let mut out = c.encoder.params();
                out.extend(c.attention.params());
                out.extend(c.trunk.params());
                out
            }
        }
    }
}

/// Actor, critic and their parameters.
#[derive(Debug, Clone)]
pub struct Policy {
    pub store: ParamStore,
    pub actor: Actor,
    pub critic: Critic,
    pub obs_dim: usize,
    pub n_agents: usize,
    pub network: NetworkConfig,
}

impl Policy {
    pub fn new(
        obs_dim: usize,
        n_agents: usize,
        variant: CriticVariant,
        network: NetworkConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let mut store = ParamStore::new();
        let actor = Actor::new(&mut store, obs_dim, &network, rng);
        let critic = Critic::new(&mut store, variant, obs_dim, n_agents, &network, rng);
        Self {
            store,
            actor,
            critic,
            obs_dim,
            n_agents,
            network,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.network.hidden_dim
    }
}
