//! Gated recurrent unit cells and multi-layer stacks.
//!
//! Gate convention: the update gate `z` keeps the previous state, so
//! `h' = z * h_prev + (1 - z) * candidate`. With zero weights every gate
//! sits at 0.5 and the state decays toward zero by halves, which the tests
//! pin down.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{xavier_uniform, ParamGroup, ParameterSet};
use crate::tensor::Tensor;

const GATE_NAMES: [(&str, &str, &str); 3] = [
    ("w_z", "u_z", "b_z"),
    ("w_r", "u_r", "b_r"),
    ("w_c", "u_c", "b_c"),
];

/// Registers the nine tensors of one GRU cell under `prefix`: per gate an
/// input weight `(h, in)`, a recurrent weight `(h, h)`, and a zero bias `(h)`.
pub fn register_gru_cell<R: Rng>(
    params: &mut ParameterSet,
    prefix: &str,
    in_dim: usize,
    h_dim: usize,
    group: ParamGroup,
    rng: &mut R,
) -> Result<()> {
    for (w, u, b) in GATE_NAMES {
        params.insert(
            &format!("{prefix}.{w}"),
            xavier_uniform(rng, vec![h_dim, in_dim])?,
            group,
        )?;
        params.insert(
            &format!("{prefix}.{u}"),
            xavier_uniform(rng, vec![h_dim, h_dim])?,
            group,
        )?;
        params.insert(&format!("{prefix}.{b}"), Tensor::zeros(vec![h_dim]), group)?;
    }
    Ok(())
}

/// One GRU cell bound onto a graph.
pub struct GruCell {
    w_z: NodeId,
    u_z: NodeId,
    b_z: NodeId,
    w_r: NodeId,
    u_r: NodeId,
    b_r: NodeId,
    w_c: NodeId,
    u_c: NodeId,
    b_c: NodeId,
}

impl GruCell {
    pub fn bind(g: &mut Graph, params: &ParameterSet, prefix: &str) -> Result<Self> {
        let mut ids = Vec::with_capacity(9);
        for (w, u, b) in GATE_NAMES {
            ids.push(g.param(params, &format!("{prefix}.{w}"))?);
            ids.push(g.param(params, &format!("{prefix}.{u}"))?);
            ids.push(g.param(params, &format!("{prefix}.{b}"))?);
        }
        Ok(GruCell {
            w_z: ids[0],
            u_z: ids[1],
            b_z: ids[2],
            w_r: ids[3],
            u_r: ids[4],
            b_r: ids[5],
            w_c: ids[6],
            u_c: ids[7],
            b_c: ids[8],
        })
    }

    fn gate(&self, g: &mut Graph, w: NodeId, x: NodeId, u: NodeId, h: NodeId, b: NodeId) -> NodeId {
        let wx = g.matvec(w, x);
        let uh = g.matvec(u, h);
        let s = g.add(wx, uh);
        g.add(s, b)
    }

    /// One step: consumes input `x` and state `h_prev`, returns the new state.
    pub fn step(&self, g: &mut Graph, x: NodeId, h_prev: NodeId) -> NodeId {
        let z_pre = self.gate(g, self.w_z, x, self.u_z, h_prev, self.b_z);
        let z = g.sigmoid(z_pre);
        let r_pre = self.gate(g, self.w_r, x, self.u_r, h_prev, self.b_r);
        let r = g.sigmoid(r_pre);
        let rh = g.mul(r, h_prev);
        let c_pre = self.gate(g, self.w_c, x, self.u_c, rh, self.b_c);
        let c = g.tanh(c_pre);
        let keep = g.mul(z, h_prev);
        let gate_new = g.affine(z, -1.0, 1.0);
        let take = g.mul(gate_new, c);
        g.add(keep, take)
    }
}

/// Registers `layers` stacked cells under `prefix.l{i}`; layer 0 consumes
/// `in_dim`, the rest consume `h_dim`.
pub fn register_gru_stack<R: Rng>(
    params: &mut ParameterSet,
    prefix: &str,
    in_dim: usize,
    h_dim: usize,
    layers: usize,
    group: ParamGroup,
    rng: &mut R,
) -> Result<()> {
    for l in 0..layers {
        let d = if l == 0 { in_dim } else { h_dim };
        register_gru_cell(params, &format!("{prefix}.l{l}"), d, h_dim, group, rng)?;
    }
    Ok(())
}

/// A stack of GRU cells bound onto a graph; layer i feeds layer i+1.
pub struct GruStack {
    cells: Vec<GruCell>,
}

impl GruStack {
    pub fn bind(g: &mut Graph, params: &ParameterSet, prefix: &str, layers: usize) -> Result<Self> {
        let cells = (0..layers)
            .map(|l| GruCell::bind(g, params, &format!("{prefix}.l{l}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(GruStack { cells })
    }

    pub fn layers(&self) -> usize {
        self.cells.len()
    }

    /// One step through every layer. `states` holds one state per layer and
    /// is replaced with the new states; the return value is the top state.
    pub fn step(&self, g: &mut Graph, x: NodeId, states: &mut Vec<NodeId>) -> NodeId {
        assert_eq!(states.len(), self.cells.len(), "state count != layer count");
        let mut input = x;
        for (cell, state) in self.cells.iter().zip(states.iter_mut()) {
            let next = cell.step(g, input, *state);
            *state = next;
            input = next;
        }
        input
    }

    /// Zero initial states, one per layer.
    pub fn zero_states(&self, g: &mut Graph, h_dim: usize) -> Vec<NodeId> {
        (0..self.cells.len())
            .map(|_| g.constant(Tensor::zeros(vec![h_dim])))
            .collect()
    }
}
