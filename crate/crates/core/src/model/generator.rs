//! Attention decoder with tied input/output embeddings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{argmax, Graph, NodeId};
use crate::gru::{register_gru_stack, GruStack};
use crate::model::{ModelDims, EMBEDDING};
use crate::params::{xavier_uniform, ParamGroup, ParameterSet};
use crate::tensor::Tensor;
use crate::vocab::{EOS, SOS};

pub fn register_generator_head<R: Rng>(
    params: &mut ParameterSet,
    dims: &ModelDims,
    rng: &mut R,
) -> Result<()> {
    let h = dims.h_dim;
    register_gru_stack(params, "dec", 2 * h, h, dims.layers, ParamGroup::Generator, rng)?;
    params.insert("attn.wq", xavier_uniform(rng, vec![h, h])?, ParamGroup::Generator)?;
    params.insert("attn.wm", xavier_uniform(rng, vec![h, h])?, ParamGroup::Generator)?;
    params.insert("attn.b", Tensor::zeros(vec![h]), ParamGroup::Generator)?;
    params.insert("attn.v", xavier_uniform(rng, vec![h])?, ParamGroup::Generator)?;
    params.insert(
        "out.bias",
        Tensor::zeros(vec![dims.vocab_size]),
        ParamGroup::Generator,
    )?;
    Ok(())
}

/// How the decoder chooses the token it consumes next.
pub enum DecodeMode<'a> {
    /// Consume the ground truth; log-probs score the ground-truth tokens.
    TeacherForcing { target: &'a [u32] },
    /// Consume the model argmax.
    Greedy,
    /// Consume a token drawn by the caller from each step's distribution.
    Sampled { draw: &'a mut dyn FnMut(&[f64]) -> usize },
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeSettings {
    pub temperature: f64,
    pub max_len: usize,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings { temperature: 1.0, max_len: 30 }
    }
}

/// Everything one decode produces. `tokens[j]` is the token scored by
/// `step_log_probs[j]`; in teacher-forcing mode that is the ground truth
/// while `argmax_tokens` records what the model itself would have said.
pub struct DecodeOutput {
    pub tokens: Vec<u32>,
    pub argmax_tokens: Vec<u32>,
    pub step_log_probs: Vec<NodeId>,
    pub distributions: Vec<NodeId>,
    pub logits: Vec<NodeId>,
    pub sequence_log_prob: NodeId,
}

pub struct Generator {
    dec: GruStack,
    attn_wq: NodeId,
    attn_wm: NodeId,
    attn_b: NodeId,
    attn_v: NodeId,
    out_bias: NodeId,
    emb: NodeId,
    layers: usize,
}

impl Generator {
    pub fn bind(g: &mut Graph, params: &ParameterSet, dims: &ModelDims) -> Result<Self> {
        Ok(Generator {
            dec: GruStack::bind(g, params, "dec", dims.layers)?,
            attn_wq: g.param(params, "attn.wq")?,
            attn_wm: g.param(params, "attn.wm")?,
            attn_b: g.param(params, "attn.b")?,
            attn_v: g.param(params, "attn.v")?,
            out_bias: g.param(params, "out.bias")?,
            emb: g.param(params, EMBEDDING)?,
            layers: dims.layers,
        })
    }

    /// Additive attention of one decoder state over the memory. Returns the
    /// normalized weights and the weighted sum of memory entries. `keys` are
    /// the precomputed `Wm . e_j` projections.
    pub fn attention(
        &self,
        g: &mut Graph,
        state: NodeId,
        memory: &[NodeId],
        keys: &[NodeId],
    ) -> Result<(NodeId, NodeId)> {
        assert!(!memory.is_empty(), "attention over empty memory");
        let query = g.matvec(self.attn_wq, state);
        let scores: Vec<NodeId> = keys
            .iter()
            .map(|&k| {
                let s = g.add(query, k);
                let s = g.add(s, self.attn_b);
                let t = g.tanh(s);
                g.dot(self.attn_v, t)
            })
            .collect();
        let stacked = g.stack_scalars(&scores);
        let weights = g.softmax_temp(stacked, 1.0)?;
        let mem_matrix = g.stack_vecs(memory);
        let context = g.mat_t_vec(mem_matrix, weights);
        Ok((weights, context))
    }

    fn attention_keys(&self, g: &mut Graph, memory: &[NodeId]) -> Vec<NodeId> {
        memory.iter().map(|&e| g.matvec(self.attn_wm, e)).collect()
    }

    /// Runs the decoder from a context state over an attention memory.
    ///
    /// Every layer starts from the context state (plus `noise`, when given).
    /// Teacher forcing scores exactly the target tokens; autoregressive
    /// modes run until they emit the end marker or hit `max_len`.
    pub fn decode(
        &self,
        g: &mut Graph,
        context_state: NodeId,
        memory: &[NodeId],
        mut mode: DecodeMode,
        settings: &DecodeSettings,
        noise: Option<&Tensor>,
    ) -> Result<DecodeOutput> {
        if memory.is_empty() {
            return Err(Error::EmptyInput("decoder needs a non-empty memory".into()));
        }
        if let DecodeMode::TeacherForcing { target } = &mode {
            if target.is_empty() {
                return Err(Error::Contract(
                    "teacher forcing needs a non-empty ground truth".into(),
                ));
            }
        }
        if settings.max_len == 0 {
            return Err(Error::InvalidHyperparameter("max_len must be positive".into()));
        }

        let init = match noise {
            Some(z) => {
                let zn = g.constant(z.clone());
                g.add(context_state, zn)
            }
            None => context_state,
        };
        let mut states: Vec<NodeId> = vec![init; self.layers];
        let keys = self.attention_keys(g, memory);

        let steps = match &mode {
            DecodeMode::TeacherForcing { target } => target.len(),
            _ => settings.max_len,
        };
        let mut tokens = Vec::new();
        let mut argmax_tokens = Vec::new();
        let mut step_log_probs = Vec::new();
        let mut distributions = Vec::new();
        let mut step_logits = Vec::new();
        let mut prev = SOS;

        for j in 0..steps {
            let top_prev = *states.last().unwrap();
            let (_, attn_ctx) = self.attention(g, top_prev, memory, &keys)?;
            let emb_prev = g.pick_row(self.emb, prev as usize);
            let x = g.concat(emb_prev, attn_ctx);
            let top = self.dec.step(g, x, &mut states);
            let raw = g.matvec(self.emb, top);
            let logits = g.add(raw, self.out_bias);
            let dist = g.softmax_temp(logits, settings.temperature)?;

            let dist_values = g.value(dist).values();
            let best = argmax(dist_values) as u32;
            let emitted = match &mut mode {
                DecodeMode::TeacherForcing { target } => target[j],
                DecodeMode::Greedy => best,
                DecodeMode::Sampled { draw } => draw(dist_values) as u32,
            };
            let logp = g.log_softmax_pick(logits, settings.temperature, emitted as usize)?;

            tokens.push(emitted);
            argmax_tokens.push(best);
            step_log_probs.push(logp);
            distributions.push(dist);
            step_logits.push(logits);

            prev = emitted;
            let autoregressive = !matches!(mode, DecodeMode::TeacherForcing { .. });
            if autoregressive && emitted == EOS {
                break;
            }
        }
        let stacked = g.stack_scalars(&step_log_probs);
        let sequence_log_prob = g.sum(stacked);
        Ok(DecodeOutput {
            tokens,
            argmax_tokens,
            step_log_probs,
            distributions,
            logits: step_logits,
            sequence_log_prob,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::encoder::Encoder;
    use crate::model::register_generator;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims { vocab_size: 10, h_dim: 4, layers: 2 }
    }

    fn params(seed: u64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        register_generator(&mut ps, &dims(), &mut rng).unwrap();
        ps
    }

    fn encoded(g: &mut Graph, ps: &ParameterSet) -> (NodeId, Vec<NodeId>) {
        let enc = Encoder::bind(g, ps, &dims()).unwrap();
        let turn: &[u32] = &[5, 7, 3];
        let ctx = enc.encode_context(g, &[turn]).unwrap();
        (ctx.state, ctx.memory)
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let ps = params(31);
        let mut g = Graph::new();
        let (state, memory) = encoded(&mut g, &ps);
        let gen = Generator::bind(&mut g, &ps, &dims()).unwrap();
        let keys = gen.attention_keys(&mut g, &memory);

        let (w, ctx) = gen.attention(&mut g, state, &memory, &keys).unwrap();
        let ws = g.value(w).values();
        assert_eq!(ws.len(), 3);
        assert!((ws.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ws.iter().all(|&x| x > 0.0));
        assert_eq!(g.value(ctx).numel(), 4);

        // single-entry memory concentrates all weight
        let (w1, c1) = gen.attention(&mut g, state, &memory[..1], &keys[..1]).unwrap();
        assert_eq!(g.value(w1).values(), &[1.0]);
        let m0 = g.value(memory[0]).values().to_vec();
        for (a, b) in g.value(c1).values().iter().zip(&m0) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_weights_when_scoring_is_flat() {
        let mut ps = params(32);
        for name in ["attn.wq", "attn.wm", "attn.v"] {
            let t = &mut ps.get_mut(name).unwrap().tensor;
            for v in t.values_mut() {
                *v = 0.0;
            }
        }
        let mut g = Graph::new();
        let (state, memory) = encoded(&mut g, &ps);
        let gen = Generator::bind(&mut g, &ps, &dims()).unwrap();
        let keys = gen.attention_keys(&mut g, &memory);
        let (w, _) = gen.attention(&mut g, state, &memory, &keys).unwrap();
        for &x in g.value(w).values() {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn teacher_forcing_scores_the_target() {
        let ps = params(33);
        let mut g = Graph::new();
        let (state, memory) = encoded(&mut g, &ps);
        let gen = Generator::bind(&mut g, &ps, &dims()).unwrap();
        let target: &[u32] = &[6, 4, 3];
        let out = gen
            .decode(
                &mut g,
                state,
                &memory,
                DecodeMode::TeacherForcing { target },
                &DecodeSettings::default(),
                None,
            )
            .unwrap();
        assert_eq!(out.tokens, target);
        assert_eq!(out.argmax_tokens.len(), 3);
        assert_eq!(out.step_log_probs.len(), 3);

        let total: f64 = out.step_log_probs.iter().map(|&n| g.value(n).item()).sum();
        assert!((total - g.value(out.sequence_log_prob).item()).abs() < 1e-9);
        assert!(total < 0.0);

        let empty: &[u32] = &[];
        assert!(matches!(
            gen.decode(
                &mut g,
                state,
                &memory,
                DecodeMode::TeacherForcing { target: empty },
                &DecodeSettings::default(),
                None,
            ),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn first_step_distribution_is_mode_independent() {
        let ps = params(34);
        let mut g = Graph::new();
        let (state, memory) = encoded(&mut g, &ps);
        let gen = Generator::bind(&mut g, &ps, &dims()).unwrap();
        let target: &[u32] = &[6, 3];
        let tf = gen
            .decode(
                &mut g,
                state,
                &memory,
                DecodeMode::TeacherForcing { target },
                &DecodeSettings::default(),
                None,
            )
            .unwrap();
        let greedy = gen
            .decode(&mut g, state, &memory, DecodeMode::Greedy, &DecodeSettings::default(), None)
            .unwrap();
        let a = g.value(tf.distributions[0]).values();
        let b = g.value(greedy.distributions[0]).values();
        assert_eq!(a, b);
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let ps = params(35);
        let mut g = Graph::new();
        let (state, memory) = encoded(&mut g, &ps);
        let gen = Generator::bind(&mut g, &ps, &dims()).unwrap();
        let s = DecodeSettings { temperature: 1.0, max_len: 5 };
        let a = gen.decode(&mut g, state, &memory, DecodeMode::Greedy, &s, None).unwrap();
        let b = gen.decode(&mut g, state, &memory, DecodeMode::Greedy, &s, None).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert!(a.tokens.len() <= 5);
        assert_eq!(a.tokens, a.argmax_tokens);
        if let Some(pos) = a.tokens.iter().position(|&t| t == EOS) {
            assert_eq!(pos, a.tokens.len() - 1);
        }
    }

    #[test]
    fn sampled_mode_consumes_caller_draws() {
        let ps = params(36);
        let mut g = Graph::new();
        let (state, memory) = encoded(&mut g, &ps);
        let gen = Generator::bind(&mut g, &ps, &dims()).unwrap();
        let mut forced = vec![5usize, 4, 3].into_iter();
        let mut draw = |_dist: &[f64]| forced.next().unwrap();
        let out = gen
            .decode(
                &mut g,
                state,
                &memory,
                DecodeMode::Sampled { draw: &mut draw },
                &DecodeSettings { temperature: 1.0, max_len: 10 },
                None,
            )
            .unwrap();
        assert_eq!(out.tokens, vec![5, 4, 3]);
    }

    #[test]
    fn noise_shifts_the_trajectory() {
        let ps = params(37);
        let mut g = Graph::new();
        let (state, memory) = encoded(&mut g, &ps);
        let gen = Generator::bind(&mut g, &ps, &dims()).unwrap();
        let s = DecodeSettings { temperature: 1.0, max_len: 4 };
        let clean = gen.decode(&mut g, state, &memory, DecodeMode::Greedy, &s, None).unwrap();
        let z = Tensor::vector(vec![3.0, -2.5, 4.0, -3.5]);
        let noisy = gen
            .decode(&mut g, state, &memory, DecodeMode::Greedy, &s, Some(&z))
            .unwrap();
        let a = g.value(clean.distributions[0]).values();
        let b = g.value(noisy.distributions[0]).values();
        assert_ne!(a, b);
    }
}
