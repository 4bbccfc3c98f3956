//! Hierarchical encoder: a bidirectional turn encoder feeding a
//! unidirectional context RNN over turn summaries.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::gru::{register_gru_stack, GruStack};
use crate::model::{ModelDims, EMBEDDING};
use crate::params::{xavier_uniform, ParamGroup, ParameterSet};
use crate::tensor::Tensor;

/// One encoded turn: per-token states (the attention memory) and their
/// element-wise RMS, the turn summary.
pub struct TurnEncoding {
    pub memory: Vec<NodeId>,
    pub summary: NodeId,
}

/// A fully encoded conversation context: the final context-RNN state and the
/// attention memory of the most recent turn.
pub struct ContextEncoding {
    pub state: NodeId,
    pub memory: Vec<NodeId>,
}

pub fn register_encoder<R: Rng>(
    params: &mut ParameterSet,
    dims: &ModelDims,
    rng: &mut R,
) -> Result<()> {
    let (h, l) = (dims.h_dim, dims.layers);
    register_gru_stack(params, "enc.fwd", h, h, l, ParamGroup::Generator, rng)?;
    register_gru_stack(params, "enc.bwd", h, h, l, ParamGroup::Generator, rng)?;
    params.insert(
        "enc.proj.w",
        xavier_uniform(rng, vec![h, 2 * h])?,
        ParamGroup::Generator,
    )?;
    params.insert("enc.proj.b", Tensor::zeros(vec![h]), ParamGroup::Generator)?;
    register_gru_stack(params, "ctx", h, h, l, ParamGroup::Generator, rng)?;
    Ok(())
}

pub struct Encoder {
    fwd: GruStack,
    bwd: GruStack,
    proj_w: NodeId,
    proj_b: NodeId,
    ctx: GruStack,
    emb: NodeId,
    h_dim: usize,
}

impl Encoder {
    pub fn bind(g: &mut Graph, params: &ParameterSet, dims: &ModelDims) -> Result<Self> {
        Ok(Encoder {
            fwd: GruStack::bind(g, params, "enc.fwd", dims.layers)?,
            bwd: GruStack::bind(g, params, "enc.bwd", dims.layers)?,
            proj_w: g.param(params, "enc.proj.w")?,
            proj_b: g.param(params, "enc.proj.b")?,
            ctx: GruStack::bind(g, params, "ctx", dims.layers)?,
            emb: g.param(params, EMBEDDING)?,
            h_dim: dims.h_dim,
        })
    }

    /// Bidirectional pass over one turn from zero states. Per token, the two
    /// directions' top states are concatenated and projected back to h_dim.
    pub fn encode_turn(&self, g: &mut Graph, turn: &[u32]) -> Result<TurnEncoding> {
        if turn.is_empty() {
            return Err(Error::EmptyInput("cannot encode an empty turn".into()));
        }
        let embeds: Vec<NodeId> = turn
            .iter()
            .map(|&id| g.pick_row(self.emb, id as usize))
            .collect();

        let mut fwd_states = self.fwd.zero_states(g, self.h_dim);
        let fwd_tops: Vec<NodeId> = embeds
            .iter()
            .map(|&x| self.fwd.step(g, x, &mut fwd_states))
            .collect();

        let mut bwd_states = self.bwd.zero_states(g, self.h_dim);
        let mut bwd_tops: Vec<NodeId> = embeds
            .iter()
            .rev()
            .map(|&x| self.bwd.step(g, x, &mut bwd_states))
            .collect();
        bwd_tops.reverse();

        let memory: Vec<NodeId> = fwd_tops
            .into_iter()
            .zip(bwd_tops)
            .map(|(f, b)| {
                let cat = g.concat(f, b);
                let proj = g.matvec(self.proj_w, cat);
                g.add(proj, self.proj_b)
            })
            .collect();
        let summary = g.l2_pool(&memory)?;
        Ok(TurnEncoding { memory, summary })
    }

    /// One context-RNN step over a turn summary.
    pub fn update_context(
        &self,
        g: &mut Graph,
        summary: NodeId,
        states: &mut Vec<NodeId>,
    ) -> NodeId {
        self.ctx.step(g, summary, states)
    }

    /// Encodes a whole context: every turn through the turn encoder, the
    /// summaries through the context RNN (from zero), keeping the last
    /// turn's per-token states as decoder attention memory.
    pub fn encode_context(&self, g: &mut Graph, turns: &[&[u32]]) -> Result<ContextEncoding> {
        if turns.is_empty() {
            return Err(Error::EmptyInput("context has no turns".into()));
        }
        let mut ctx_states = self.ctx.zero_states(g, self.h_dim);
        let mut state = *ctx_states.last().unwrap();
        let mut memory = Vec::new();
        for turn in turns {
            let enc = self.encode_turn(g, turn)?;
            state = self.update_context(g, enc.summary, &mut ctx_states);
            memory = enc.memory;
        }
        Ok(ContextEncoding { state, memory })
    }
}
