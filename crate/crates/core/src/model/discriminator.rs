//! Discriminator heads over the shared context encoding.
//!
//! Both heads read a response conditioned on the encoder's context state.
//! The utterance head scores the whole response once; the word head scores
//! every token. Each also exposes its pre-projection features, which the
//! bootstrapped soft labels are computed from.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::gru::{register_gru_stack, GruStack};
use crate::model::{ModelDims, EMBEDDING};
use crate::params::{xavier_uniform, ParamGroup, ParameterSet};
use crate::tensor::Tensor;

/// Utterance-level verdict: scalar score in (0,1) and the feature vector it
/// was projected from.
pub struct DiscOutput {
    pub score: NodeId,
    pub features: NodeId,
}

/// Word-level verdict: one score per response token plus pooled features.
pub struct WordDiscOutput {
    pub token_scores: Vec<NodeId>,
    pub features: NodeId,
}

pub fn register_utterance_discriminator<R: Rng>(
    params: &mut ParameterSet,
    dims: &ModelDims,
    rng: &mut R,
) -> Result<()> {
    let h = dims.h_dim;
    register_gru_stack(params, "disc.utt", h, h, dims.layers, ParamGroup::Discriminator, rng)?;
    params.insert("disc.utt.w", xavier_uniform(rng, vec![h])?, ParamGroup::Discriminator)?;
    params.insert("disc.utt.b", Tensor::zeros(vec![1]), ParamGroup::Discriminator)?;
    Ok(())
}

pub fn register_word_discriminator<R: Rng>(
    params: &mut ParameterSet,
    dims: &ModelDims,
    rng: &mut R,
) -> Result<()> {
    let h = dims.h_dim;
    register_gru_stack(params, "disc.word.fwd", h, h, dims.layers, ParamGroup::Discriminator, rng)?;
    register_gru_stack(params, "disc.word.bwd", h, h, dims.layers, ParamGroup::Discriminator, rng)?;
    params.insert(
        "disc.word.proj.w",
        xavier_uniform(rng, vec![h, 2 * h])?,
        ParamGroup::Discriminator,
    )?;
    params.insert("disc.word.proj.b", Tensor::zeros(vec![h]), ParamGroup::Discriminator)?;
    params.insert("disc.word.w", xavier_uniform(rng, vec![h])?, ParamGroup::Discriminator)?;
    params.insert("disc.word.b", Tensor::zeros(vec![1]), ParamGroup::Discriminator)?;
    Ok(())
}

/// Response token inputs: either exact embedding rows for token ids, or
/// probability-weighted embedding mixes for the relaxed (differentiable)
/// path.
enum TokenInputs<'a> {
    Ids(&'a [u32]),
    Distributions(&'a [NodeId]),
}

impl TokenInputs<'_> {
    fn len(&self) -> usize {
        match self {
            TokenInputs::Ids(ids) => ids.len(),
            TokenInputs::Distributions(d) => d.len(),
        }
    }

    fn embed(&self, g: &mut Graph, emb: NodeId, j: usize) -> NodeId {
        match self {
            TokenInputs::Ids(ids) => g.pick_row(emb, ids[j] as usize),
            TokenInputs::Distributions(dists) => g.mat_t_vec(emb, dists[j]),
        }
    }
}

pub struct UtteranceDiscriminator {
    rnn: GruStack,
    w: NodeId,
    b: NodeId,
    emb: NodeId,
    layers: usize,
}

impl UtteranceDiscriminator {
    pub fn bind(g: &mut Graph, params: &ParameterSet, dims: &ModelDims) -> Result<Self> {
        Ok(UtteranceDiscriminator {
            rnn: GruStack::bind(g, params, "disc.utt", dims.layers)?,
            w: g.param(params, "disc.utt.w")?,
            b: g.param(params, "disc.utt.b")?,
            emb: g.param(params, EMBEDDING)?,
            layers: dims.layers,
        })
    }

    fn run(&self, g: &mut Graph, context_state: NodeId, inputs: TokenInputs) -> Result<DiscOutput> {
        if inputs.len() == 0 {
            return Err(Error::EmptyInput("cannot score an empty response".into()));
        }
        let mut states = vec![context_state; self.layers];
        let mut last = context_state;
        for j in 0..inputs.len() {
            let x = inputs.embed(g, self.emb, j);
            last = self.rnn.step(g, x, &mut states);
        }
        let logit = g.dot(self.w, last);
        let logit = g.add(logit, self.b);
        let score = g.sigmoid(logit);
        Ok(DiscOutput { score, features: last })
    }

    /// Scores a token-id response; the recurrence starts from the context
    /// state at every layer.
    pub fn score_ids(&self, g: &mut Graph, context_state: NodeId, resp: &[u32]) -> Result<DiscOutput> {
        self.run(g, context_state, TokenInputs::Ids(resp))
    }

    /// Scores a relaxed response given per-step distributions: each input is
    /// the expected embedding under that step's distribution, so the score
    /// stays differentiable in the generator's logits.
    pub fn score_soft(
        &self,
        g: &mut Graph,
        context_state: NodeId,
        dists: &[NodeId],
    ) -> Result<DiscOutput> {
        self.run(g, context_state, TokenInputs::Distributions(dists))
    }
}

pub struct WordDiscriminator {
    fwd: GruStack,
    bwd: GruStack,
    proj_w: NodeId,
    proj_b: NodeId,
    w: NodeId,
    b: NodeId,
    emb: NodeId,
    layers: usize,
}

impl WordDiscriminator {
    pub fn bind(g: &mut Graph, params: &ParameterSet, dims: &ModelDims) -> Result<Self> {
        Ok(WordDiscriminator {
            fwd: GruStack::bind(g, params, "disc.word.fwd", dims.layers)?,
            bwd: GruStack::bind(g, params, "disc.word.bwd", dims.layers)?,
            proj_w: g.param(params, "disc.word.proj.w")?,
            proj_b: g.param(params, "disc.word.proj.b")?,
            w: g.param(params, "disc.word.w")?,
            b: g.param(params, "disc.word.b")?,
            emb: g.param(params, EMBEDDING)?,
            layers: dims.layers,
        })
    }

    fn run(
        &self,
        g: &mut Graph,
        context_state: NodeId,
        inputs: TokenInputs,
    ) -> Result<WordDiscOutput> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::EmptyInput("cannot score an empty response".into()));
        }
        let embeds: Vec<NodeId> = (0..n).map(|j| inputs.embed(g, self.emb, j)).collect();

        let mut fwd_states = vec![context_state; self.layers];
        let fwd_tops: Vec<NodeId> = embeds
            .iter()
            .map(|&x| self.fwd.step(g, x, &mut fwd_states))
            .collect();
        let mut bwd_states = vec![context_state; self.layers];
        let mut bwd_tops: Vec<NodeId> = embeds
            .iter()
            .rev()
            .map(|&x| self.bwd.step(g, x, &mut bwd_states))
            .collect();
        bwd_tops.reverse();

        let feats: Vec<NodeId> = fwd_tops
            .into_iter()
            .zip(bwd_tops)
            .map(|(f, b)| {
                let cat = g.concat(f, b);
                let p = g.matvec(self.proj_w, cat);
                g.add(p, self.proj_b)
            })
            .collect();
        let token_scores: Vec<NodeId> = feats
            .iter()
            .map(|&f| {
                let logit = g.dot(self.w, f);
                let logit = g.add(logit, self.b);
                g.sigmoid(logit)
            })
            .collect();
        let features = g.l2_pool(&feats)?;
        Ok(WordDiscOutput { token_scores, features })
    }

    pub fn score_ids(
        &self,
        g: &mut Graph,
        context_state: NodeId,
        resp: &[u32],
    ) -> Result<WordDiscOutput> {
        self.run(g, context_state, TokenInputs::Ids(resp))
    }

    pub fn score_soft(
        &self,
        g: &mut Graph,
        context_state: NodeId,
        dists: &[NodeId],
    ) -> Result<WordDiscOutput> {
        self.run(g, context_state, TokenInputs::Distributions(dists))
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
        ModelDims { vocab_size: 9, h_dim: 3, layers: 2 }
    }

    fn params(seed: u64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        register_generator(&mut ps, &dims(), &mut rng).unwrap();
        register_utterance_discriminator(&mut ps, &dims(), &mut rng).unwrap();
        register_word_discriminator(&mut ps, &dims(), &mut rng).unwrap();
        ps
    }

    fn context(g: &mut Graph, ps: &ParameterSet) -> NodeId {
        let enc = Encoder::bind(g, ps, &dims()).unwrap();
        let turn: &[u32] = &[4, 6, 3];
        enc.encode_context(g, &[turn]).unwrap().state
    }

    #[test]
    fn utterance_score_is_in_unit_interval() {
        let ps = params(41);
        let mut g = Graph::new();
        let state = context(&mut g, &ps);
        let d = UtteranceDiscriminator::bind(&mut g, &ps, &dims()).unwrap();
        let out = d.score_ids(&mut g, state, &[5, 7, 3]).unwrap();
        let q = g.value(out.score).item();
        assert!(q > 0.0 && q < 1.0);
        assert_eq!(g.value(out.features).numel(), 3);
        assert!(matches!(d.score_ids(&mut g, state, &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn zero_projection_scores_half() {
        let mut ps = params(42);
        for v in ps.get_mut("disc.utt.w").unwrap().tensor.values_mut() {
            *v = 0.0;
        }
        let mut g = Graph::new();
        let state = context(&mut g, &ps);
        let d = UtteranceDiscriminator::bind(&mut g, &ps, &dims()).unwrap();
        let out = d.score_ids(&mut g, state, &[5, 3]).unwrap();
        assert_eq!(g.value(out.score).item(), 0.5);

        for v in ps.get_mut("disc.word.w").unwrap().tensor.values_mut() {
            *v = 0.0;
        }
        let mut g = Graph::new();
        let state = context(&mut g, &ps);
        let wd = WordDiscriminator::bind(&mut g, &ps, &dims()).unwrap();
        let out = wd.score_ids(&mut g, state, &[5, 6, 3]).unwrap();
        for s in &out.token_scores {
            assert_eq!(g.value(*s).item(), 0.5);
        }
    }

    #[test]
    fn context_state_matters() {
        let ps = params(43);
        let mut g = Graph::new();
        let enc = Encoder::bind(&mut g, &ps, &dims()).unwrap();
        let t1: &[u32] = &[4, 3];
        let t2: &[u32] = &[7, 8, 3];
        let c1 = enc.encode_context(&mut g, &[t1]).unwrap().state;
        let c2 = enc.encode_context(&mut g, &[t2]).unwrap().state;
        let d = UtteranceDiscriminator::bind(&mut g, &ps, &dims()).unwrap();
        let q1 = d.score_ids(&mut g, c1, &[5, 3]).unwrap();
        let q2 = d.score_ids(&mut g, c2, &[5, 3]).unwrap();
        assert_ne!(g.value(q1.score).item(), g.value(q2.score).item());
    }

    #[test]
    fn word_scores_match_response_length() {
        let ps = params(44);
        let mut g = Graph::new();
        let state = context(&mut g, &ps);
        let d = WordDiscriminator::bind(&mut g, &ps, &dims()).unwrap();
        let out = d.score_ids(&mut g, state, &[5, 6, 7, 3]).unwrap();
        assert_eq!(out.token_scores.len(), 4);
        for s in &out.token_scores {
            let v = g.value(*s).item();
            assert!(v > 0.0 && v < 1.0);
        }
        assert_eq!(g.value(out.features).numel(), 3);
    }

    #[test]
    fn one_hot_relaxation_equals_id_lookup() {
        let ps = params(45);
        let mut g = Graph::new();
        let state = context(&mut g, &ps);
        let d = UtteranceDiscriminator::bind(&mut g, &ps, &dims()).unwrap();

        let resp = [5u32, 3];
        let hard = d.score_ids(&mut g, state, &resp).unwrap();
        let dists: Vec<NodeId> = resp
            .iter()
            .map(|&id| {
                let mut v = vec![0.0; 9];
                v[id as usize] = 1.0;
                g.constant(Tensor::vector(v))
            })
            .collect();
        let soft = d.score_soft(&mut g, state, &dists).unwrap();
        let a = g.value(hard.score).item();
        let b = g.value(soft.score).item();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn embedding_is_shared_with_the_generator_side() {
        let ps = params(46);
        let mut g = Graph::new();
        let state = context(&mut g, &ps);
        let before = g.param_node(EMBEDDING).unwrap();
        let d = UtteranceDiscriminator::bind(&mut g, &ps, &dims()).unwrap();
        let _ = d.score_ids(&mut g, state, &[5, 3]).unwrap();
        assert_eq!(g.param_node(EMBEDDING).unwrap(), before);
    }
}
