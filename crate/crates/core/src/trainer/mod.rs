//! Joint training loop. Each step teaches the generator from a β-weighted
//! teacher-forcing term plus a policy term, and the discriminator from three
//! hard-labeled samples (plus the soft-labeled sample when bootstrapping is
//! on). Both networks share the encoder; only the generator update touches
//! its weights.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::corpus::{
    encode_corpus, encode_turn, make_batches, read_corpus_file, sample_distractor, split_dataset,
    Batch, DialogueExample,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics::{bleu2, EvalPair};
use crate::model::{
    register_generator, register_utterance_discriminator, register_word_discriminator,
    ContextEncoding, DecodeMode, DecodeOutput, DecodeSettings, Encoder, Generator, ModelDims,
    UtteranceDiscriminator, WordDiscriminator, EMBEDDING,
};
use crate::objectives::{
    bootstrap_similarity, discriminator_loss, discriminator_target, generator_loss_sequence_level,
    generator_loss_word_level, generator_target, generator_target_word,
    make_special_case_config, SampleKind, ScoredSample, SequenceTerm, WordCoefficient, WordTerm,
};
use crate::params::{
    clip_gradients, load_checkpoint, save_checkpoint, ParamGroup, ParameterSet,
};
use crate::sampling::{
    deterministic_policy_surrogate, sample_top_k_categorical, sample_top_k_uniform,
    SamplingStrategy,
};
use crate::streams::stream_rng;
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, EOS};

pub use config::{DiscLevel, TrainingConfig};

/// Measurements from one optimization step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub gen_loss: f64,
    pub disc_loss: f64,
    /// Scored samples fed to the discriminator per example: 0 in the
    /// special-case modes, 3 hard samples, 4 with bootstrapping.
    pub disc_samples_per_example: usize,
    pub gen_grad_norm: f64,
    pub disc_grad_norm: f64,
}

/// Whichever discriminator the config picked, behind one face: `scores` are
/// the nodes trained against a label (one per token at word level), `values`
/// their current numbers, `features` the pooled vector for soft labels.
enum Disc {
    Utt(UtteranceDiscriminator),
    Word(WordDiscriminator),
}

struct DiscForward {
    scores: Vec<NodeId>,
    values: Vec<f64>,
    features: NodeId,
}

impl Disc {
    fn bind(g: &mut Graph, params: &ParameterSet, dims: &ModelDims, level: DiscLevel) -> Result<Disc> {
        Ok(match level {
            DiscLevel::Utterance => Disc::Utt(UtteranceDiscriminator::bind(g, params, dims)?),
            DiscLevel::Word => Disc::Word(WordDiscriminator::bind(g, params, dims)?),
        })
    }

    fn score_ids(&self, g: &mut Graph, context_state: NodeId, resp: &[u32]) -> Result<DiscForward> {
        Ok(match self {
            Disc::Utt(d) => {
                let out = d.score_ids(g, context_state, resp)?;
                DiscForward {
                    values: vec![g.value(out.score).item()],
                    scores: vec![out.score],
                    features: out.features,
                }
            }
            Disc::Word(d) => {
                let out = d.score_ids(g, context_state, resp)?;
                let values = out.token_scores.iter().map(|&s| g.value(s).item()).collect();
                DiscForward { values, scores: out.token_scores, features: out.features }
            }
        })
    }

    fn score_soft(
        &self,
        g: &mut Graph,
        context_state: NodeId,
        distributions: &[NodeId],
    ) -> Result<DiscForward> {
        Ok(match self {
            Disc::Utt(d) => {
                let out = d.score_soft(g, context_state, distributions)?;
                DiscForward {
                    values: vec![g.value(out.score).item()],
                    scores: vec![out.score],
                    features: out.features,
                }
            }
            Disc::Word(d) => {
                let out = d.score_soft(g, context_state, distributions)?;
                let values = out.token_scores.iter().map(|&s| g.value(s).item()).collect();
                DiscForward { values, scores: out.token_scores, features: out.features }
            }
        })
    }
}

/// Reads the model geometry back from the stored embedding matrix and checks
/// it against the config.
pub fn dims_from_params(params: &ParameterSet, cfg: &TrainingConfig) -> Result<ModelDims> {
    let emb = params
        .get(EMBEDDING)
        .ok_or_else(|| Error::Checkpoint("parameter set has no embedding matrix".into()))?;
    let shape = emb.tensor.shape();
    if shape.len() != 2 {
        return Err(Error::Checkpoint(format!("embedding has shape {shape:?}")));
    }
    if shape[1] != cfg.h_dim {
        return Err(Error::Checkpoint(format!(
            "checkpoint hidden size {} does not match configured h_dim {}",
            shape[1], cfg.h_dim
        )));
    }
    let dims = ModelDims { vocab_size: shape[0], h_dim: shape[1], layers: cfg.layers };
    dims.validate()?;
    Ok(dims)
}

/// Fresh parameters for the configured model: generator always, plus the
/// configured discriminator unless a special-case mode disables it.
pub fn register_model(cfg: &TrainingConfig, vocab_size: usize) -> Result<ParameterSet> {
    let dims = ModelDims { vocab_size, h_dim: cfg.h_dim, layers: cfg.layers };
    let mut params = ParameterSet::new();
    let mut rng = stream_rng(cfg.seed, "init", &[]);
    register_generator(&mut params, &dims, &mut rng)?;
    if cfg.special_case.is_none() {
        match cfg.level {
            DiscLevel::Word => register_word_discriminator(&mut params, &dims, &mut rng)?,
            DiscLevel::Utterance => register_utterance_discriminator(&mut params, &dims, &mut rng)?,
        }
    }
    Ok(params)
}

/// `lr·decay` when the loss rose on each of the last two iterations, i.e.
/// the window ends in two consecutive increases; otherwise unchanged.
pub fn lr_schedule(recent_losses: &[f64], lr: f64, decay: f64) -> Result<f64> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "decay must lie in (0, 1), got {decay}"
        )));
    }
    let n = recent_losses.len();
    if n >= 3 && recent_losses[n - 1] > recent_losses[n - 2] && recent_losses[n - 2] > recent_losses[n - 3]
    {
        Ok(lr * decay)
    } else {
        Ok(lr)
    }
}

fn accumulate(into: &mut BTreeMap<String, Tensor>, from: BTreeMap<String, Tensor>) {
    for (name, t) in from {
        match into.get_mut(&name) {
            Some(acc) => {
                for (a, b) in acc.values_mut().iter_mut().zip(t.values()) {
                    *a += b;
                }
            }
            None => {
                into.insert(name, t);
            }
        }
    }
}

fn scale_grads(grads: &mut BTreeMap<String, Tensor>, s: f64) {
    for t in grads.values_mut() {
        for v in t.values_mut() {
            *v *= s;
        }
    }
}

fn word_coef(cfg: &TrainingConfig) -> f64 {
    match cfg.word_coefficient {
        WordCoefficient::Literal => 1.0 - cfg.beta,
        WordCoefficient::Consistent => cfg.alpha,
    }
}

/// Builds the generator and discriminator losses for one example in
/// adversarial mode. Returns the loss nodes and the discriminator sample
/// count.
#[allow(clippy::too_many_arguments)]
fn adversarial_losses(
    g: &mut Graph,
    generator: &Generator,
    disc: &Disc,
    ctx: &ContextEncoding,
    tf: &DecodeOutput,
    target: &[u32],
    distractor: Option<&[u32]>,
    cfg: &TrainingConfig,
    dims: &ModelDims,
    settings: &DecodeSettings,
    step: u64,
    example: usize,
) -> Result<(NodeId, NodeId, usize)> {
    let hp = cfg.hyperparams();
    let coords = [step, example as u64];

    // Policy rollout. Top-k strategies sample a discrete sequence and learn
    // through the score-function estimator; the Gaussian strategy decodes
    // greedily under injected noise and learns through the relaxed
    // discriminator score.
    let mut sampled_rollout: Option<DecodeOutput> = None;
    let mut relaxed: Option<(DecodeOutput, DiscForward)> = None;
    match cfg.strategy {
        SamplingStrategy::CategoricalTopK | SamplingStrategy::UniformTopK => {
            if cfg.top_k > dims.vocab_size {
                return Err(Error::Config(format!(
                    "top_k {} exceeds the vocabulary of {} tokens",
                    cfg.top_k, dims.vocab_size
                )));
            }
            let mut rng = stream_rng(cfg.seed, "policy", &coords);
            let categorical = cfg.strategy == SamplingStrategy::CategoricalTopK;
            let k = cfg.top_k;
            let mut draw = |p: &[f64]| -> usize {
                let pick = if categorical {
                    sample_top_k_categorical(p, k, &mut rng)
                } else {
                    sample_top_k_uniform(p, k, &mut rng)
                };
                pick.expect("top_k checked against the vocabulary")
            };
            let out = generator.decode(
                g,
                ctx.state,
                &ctx.memory,
                DecodeMode::Sampled { draw: &mut draw },
                settings,
                None,
            )?;
            sampled_rollout = Some(out);
        }
        SamplingStrategy::Gaussian => {
            let mut rng = stream_rng(cfg.seed, "noise", &coords);
            let z: Vec<f64> = (0..dims.h_dim).map(|_| rng.sample(StandardNormal)).collect();
            let noise = Tensor::vector(z);
            let out = generator.decode(
                g,
                ctx.state,
                &ctx.memory,
                DecodeMode::Greedy,
                settings,
                Some(&noise),
            )?;
            let fwd = disc.score_soft(g, ctx.state, &out.distributions)?;
            relaxed = Some((out, fwd));
        }
    }

    let sample_tokens: Vec<u32> = match (&sampled_rollout, &relaxed) {
        (Some(out), _) => out.tokens.clone(),
        (_, Some((out, _))) => out.tokens.clone(),
        _ => unreachable!(),
    };
    let sample_fwd: Option<DiscForward> = if sampled_rollout.is_some() || cfg.bootstrap {
        Some(disc.score_ids(g, ctx.state, &sample_tokens)?)
    } else {
        None
    };

    let loss_g = match (&sampled_rollout, cfg.level) {
        (Some(out), DiscLevel::Utterance) => {
            let fwd = sample_fwd.as_ref().expect("scored above");
            let q = fwd.values[0];
            let terms = [
                SequenceTerm {
                    step_log_probs: tf.step_log_probs.clone(),
                    weight: generator_target(SampleKind::GroundTruth, None, &hp)?,
                },
                SequenceTerm {
                    step_log_probs: out.step_log_probs.clone(),
                    weight: generator_target(SampleKind::PolicySample, Some(q), &hp)?,
                },
            ];
            generator_loss_sequence_level(g, &terms)
        }
        (Some(out), DiscLevel::Word) => {
            let fwd = sample_fwd.as_ref().expect("scored above");
            let gt_w = generator_target_word(SampleKind::GroundTruth, 0.0, &hp, cfg.word_coefficient);
            let pol_w: Vec<f64> = fwd
                .values
                .iter()
                .map(|&d| generator_target_word(SampleKind::PolicySample, d, &hp, cfg.word_coefficient))
                .collect();
            let terms = [
                WordTerm {
                    weights: vec![gt_w; tf.step_log_probs.len()],
                    step_log_probs: tf.step_log_probs.clone(),
                },
                WordTerm { step_log_probs: out.step_log_probs.clone(), weights: pol_w },
            ];
            generator_loss_word_level(g, &terms)?
        }
        (None, DiscLevel::Utterance) => {
            let (_, fwd) = relaxed.as_ref().expect("gaussian rollout");
            let base = generator_loss_sequence_level(
                g,
                &[SequenceTerm {
                    step_log_probs: tf.step_log_probs.clone(),
                    weight: generator_target(SampleKind::GroundTruth, None, &hp)?,
                }],
            );
            let surrogate = deterministic_policy_surrogate(g, fwd.scores[0], hp.alpha);
            g.add(base, surrogate)
        }
        (None, DiscLevel::Word) => {
            let (_, fwd) = relaxed.as_ref().expect("gaussian rollout");
            let gt_w = generator_target_word(SampleKind::GroundTruth, 0.0, &hp, cfg.word_coefficient);
            let base = generator_loss_word_level(
                g,
                &[WordTerm {
                    weights: vec![gt_w; tf.step_log_probs.len()],
                    step_log_probs: tf.step_log_probs.clone(),
                }],
            )?;
            let stacked = g.stack_scalars(&fwd.scores);
            let total = g.sum(stacked);
            let surrogate = g.affine(total, -word_coef(cfg), 0.0);
            g.add(base, surrogate)
        }
    };

    // Discriminator samples: ground truth (β), teacher-forcing argmax (0),
    // distractor (0), and optionally the soft-labeled rollout.
    let gt_fwd = disc.score_ids(g, ctx.state, target)?;
    let mut samples = vec![ScoredSample {
        scores: gt_fwd.scores.clone(),
        label: discriminator_target(SampleKind::GroundTruth, &hp)?,
    }];
    let argmax_fwd = disc.score_ids(g, ctx.state, &tf.argmax_tokens)?;
    samples.push(ScoredSample {
        scores: argmax_fwd.scores,
        label: discriminator_target(SampleKind::TfArgmax, &hp)?,
    });
    let distractor = distractor.ok_or_else(|| {
        Error::Contract("adversarial training needs a distractor for every example".into())
    })?;
    let distractor_fwd = disc.score_ids(g, ctx.state, distractor)?;
    samples.push(ScoredSample {
        scores: distractor_fwd.scores,
        label: discriminator_target(SampleKind::Distractor, &hp)?,
    });
    if cfg.bootstrap {
        let fwd = sample_fwd.as_ref().expect("scored above");
        let label = bootstrap_similarity(
            g.value(fwd.features).values(),
            g.value(gt_fwd.features).values(),
        )?;
        samples.push(ScoredSample { scores: fwd.scores.clone(), label });
    }
    let count = samples.len();
    let loss_d = discriminator_loss(g, &samples)?;
    Ok((loss_g, loss_d, count))
}

/// One simultaneous generator + discriminator update on a batch. Gradients
/// are averaged over the batch in example order, clipped per group, and both
/// SGD updates are applied from the pre-step parameter values.
pub fn train_step(
    batch: &Batch,
    params: &mut ParameterSet,
    cfg: &TrainingConfig,
    step: u64,
    lr: f64,
) -> Result<StepStats> {
    let dims = dims_from_params(params, cfg)?;
    let hp = cfg.hyperparams();
    let settings = DecodeSettings { temperature: cfg.tau, max_len: cfg.max_decode_len };
    let special = cfg.special_case.map(|k| make_special_case_config(k, &hp));

    let mut gen_grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut disc_grads: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut gen_loss = 0.0;
    let mut disc_loss = 0.0;
    let mut disc_samples = 0;

    for i in 0..batch.size {
        let mut g = Graph::new();
        let encoder = Encoder::bind(&mut g, params, &dims)?;
        let generator = Generator::bind(&mut g, params, &dims)?;
        let context = batch.context(i);
        let ctx = encoder.encode_context(&mut g, &context)?;
        let target = batch.target(i);
        let tf = generator.decode(
            &mut g,
            ctx.state,
            &ctx.memory,
            DecodeMode::TeacherForcing { target },
            &settings,
            None,
        )?;

        let (loss_g, loss_d) = match &special {
            Some(w) => {
                let mut terms = vec![SequenceTerm {
                    step_log_probs: tf.step_log_probs.clone(),
                    weight: w.ground_truth,
                }];
                if w.tf_argmax != 0.0 {
                    let mut argmax_logps = Vec::with_capacity(tf.logits.len());
                    for (j, &logits) in tf.logits.iter().enumerate() {
                        argmax_logps.push(g.log_softmax_pick(
                            logits,
                            cfg.tau,
                            tf.argmax_tokens[j] as usize,
                        )?);
                    }
                    terms.push(SequenceTerm { step_log_probs: argmax_logps, weight: w.tf_argmax });
                }
                (generator_loss_sequence_level(&mut g, &terms), None)
            }
            None => {
                let disc = Disc::bind(&mut g, params, &dims, cfg.level)?;
                let (lg, ld, count) = adversarial_losses(
                    &mut g,
                    &generator,
                    &disc,
                    &ctx,
                    &tf,
                    target,
                    batch.distractor(i),
                    cfg,
                    &dims,
                    &settings,
                    step,
                    i,
                )?;
                disc_samples = count;
                (lg, Some(ld))
            }
        };

        let gv = g.value(loss_g).item();
        let dv = loss_d.map(|n| g.value(n).item()).unwrap_or(0.0);
        if !gv.is_finite() || !dv.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("example {i}: generator loss {gv}, discriminator loss {dv}"),
            });
        }
        gen_loss += gv;
        disc_loss += dv;

        let grads = g.backward(loss_g)?;
        accumulate(&mut gen_grads, g.collect_param_grads(params, &grads, Some(ParamGroup::Generator)));
        if let Some(ld) = loss_d {
            let grads = g.backward(ld)?;
            accumulate(
                &mut disc_grads,
                g.collect_param_grads(params, &grads, Some(ParamGroup::Discriminator)),
            );
        }
    }

    let b = batch.size as f64;
    scale_grads(&mut gen_grads, 1.0 / b);
    let gen_grad_norm = clip_gradients(&mut gen_grads, cfg.clip)?;
    let disc_grad_norm = if disc_grads.is_empty() {
        0.0
    } else {
        scale_grads(&mut disc_grads, 1.0 / b);
        clip_gradients(&mut disc_grads, cfg.clip)?
    };
    params.sgd_step(&gen_grads, lr)?;
    if !disc_grads.is_empty() {
        params.sgd_step(&disc_grads, lr)?;
    }

    Ok(StepStats {
        gen_loss: gen_loss / b,
        disc_loss: disc_loss / b,
        disc_samples_per_example: disc_samples,
        gen_grad_norm,
        disc_grad_norm,
    })
}

/// How evaluation and the `generate` entry point decode.
#[derive(Debug, Clone, Copy)]
pub enum EvalDecode {
    Greedy,
    TopK { k: usize },
}

/// Decodes one response for a context, EOS stripped.
pub fn decode_response<R: Rng>(
    params: &ParameterSet,
    cfg: &TrainingConfig,
    context: &[&[u32]],
    mode: EvalDecode,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let dims = dims_from_params(params, cfg)?;
    let mut g = Graph::new();
    let encoder = Encoder::bind(&mut g, params, &dims)?;
    let generator = Generator::bind(&mut g, params, &dims)?;
    let ctx = encoder.encode_context(&mut g, context)?;
    let settings = DecodeSettings { temperature: cfg.tau, max_len: cfg.max_decode_len };
    let out = match mode {
        EvalDecode::Greedy => {
            generator.decode(&mut g, ctx.state, &ctx.memory, DecodeMode::Greedy, &settings, None)?
        }
        EvalDecode::TopK { k } => {
            if k == 0 || k > dims.vocab_size {
                return Err(Error::Config(format!(
                    "k must lie in [1, {}], got {k}",
                    dims.vocab_size
                )));
            }
            let uniform = cfg.strategy == SamplingStrategy::UniformTopK;
            let mut draw = |p: &[f64]| -> usize {
                let pick = if uniform {
                    sample_top_k_uniform(p, k, rng)
                } else {
                    sample_top_k_categorical(p, k, rng)
                };
                pick.expect("k checked against the vocabulary")
            };
            generator.decode(
                &mut g,
                ctx.state,
                &ctx.memory,
                DecodeMode::Sampled { draw: &mut draw },
                &settings,
                None,
            )?
        }
    };
    Ok(strip_eos(&out.tokens))
}

fn strip_eos(tokens: &[u32]) -> Vec<u32> {
    let mut t = tokens.to_vec();
    while t.last() == Some(&EOS) {
        t.pop();
    }
    t
}

/// Decodes a whole split into (hypothesis, reference) token pairs.
pub fn eval_pairs(
    params: &ParameterSet,
    cfg: &TrainingConfig,
    vocab: &Vocabulary,
    examples: &[DialogueExample],
    mode: EvalDecode,
    purpose: &str,
    coords: &[u64],
) -> Result<Vec<EvalPair>> {
    let mut pairs = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let context: Vec<&[u32]> = ex.context.iter().map(|t| t.as_slice()).collect();
        let mut c = coords.to_vec();
        c.push(i as u64);
        let mut rng = stream_rng(cfg.seed, purpose, &c);
        let hyp = decode_response(params, cfg, &context, mode, &mut rng)?;
        pairs.push(EvalPair {
            hypothesis: vocab.decode_ids(&hyp),
            reference: vocab.decode_ids(&strip_eos(&ex.target)),
        });
    }
    Ok(pairs)
}

/// Mean discriminator score for a (context, response) pair: Q at utterance
/// level, the token mean of d_j at word level.
pub fn score_response(
    params: &ParameterSet,
    cfg: &TrainingConfig,
    context: &[&[u32]],
    response: &[u32],
) -> Result<f64> {
    let dims = dims_from_params(params, cfg)?;
    let mut g = Graph::new();
    let encoder = Encoder::bind(&mut g, params, &dims)?;
    let disc = Disc::bind(&mut g, params, &dims, cfg.level)?;
    let ctx = encoder.encode_context(&mut g, context)?;
    let fwd = disc.score_ids(&mut g, ctx.state, response)?;
    Ok(fwd.values.iter().sum::<f64>() / fwd.values.len() as f64)
}

/// Validation-set BLEU-2 sweep over k. Ties resolve to the smaller k; the
/// full curve comes back alongside the winner.
pub struct TopKSearch {
    pub best_k: usize,
    pub curve: Vec<(usize, f64)>,
}

pub fn search_top_k(
    params: &ParameterSet,
    cfg: &TrainingConfig,
    vocab: &Vocabulary,
    validation: &[DialogueExample],
    k_max: usize,
) -> Result<TopKSearch> {
    if validation.is_empty() {
        return Err(Error::Config("top-k search needs a non-empty validation set".into()));
    }
    if k_max == 0 {
        return Err(Error::Config("top-k search needs k_max >= 1".into()));
    }
    let mut curve = Vec::with_capacity(k_max);
    let mut best = (0usize, f64::NEG_INFINITY);
    for k in 1..=k_max {
        let pairs = eval_pairs(
            params,
            cfg,
            vocab,
            validation,
            EvalDecode::TopK { k },
            "search-topk",
            &[k as u64],
        )?;
        let score = bleu2(&pairs)?;
        if score > best.1 {
            best = (k, score);
        }
        curve.push((k, score));
    }
    Ok(TopKSearch { best_k: best.0, curve })
}

struct RunState {
    step: u64,
    resume_epoch: u64,
    resume_batch: u64,
    lr: f64,
    losses: Vec<f64>,
}

impl RunState {
    fn fresh(lr: f64) -> Self {
        RunState { step: 0, resume_epoch: 0, resume_batch: 0, lr, losses: Vec::new() }
    }

    fn push_loss(&mut self, l: f64) {
        self.losses.push(l);
        if self.losses.len() > 3 {
            self.losses.remove(0);
        }
    }

    fn meta(&self, epoch: u64, next_batch: u64, vocab_size: usize, cfg: &TrainingConfig) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("step".into(), self.step.to_string());
        m.insert("epoch".into(), epoch.to_string());
        m.insert("batch".into(), next_batch.to_string());
        m.insert("lr_bits".into(), self.lr.to_bits().to_string());
        let losses = if self.losses.is_empty() {
            "none".to_string()
        } else {
            self.losses
                .iter()
                .map(|l| l.to_bits().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        m.insert("loss_bits".into(), losses);
        m.insert("vocab_size".into(), vocab_size.to_string());
        m.insert("h_dim".into(), cfg.h_dim.to_string());
        m.insert("layers".into(), cfg.layers.to_string());
        m
    }

    fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn field<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
            meta.get(key)
                .map(|s| s.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("metadata key `{key}` missing")))
        }
        fn parse_u64(key: &str, v: &str) -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Checkpoint(format!("metadata key `{key}` has value `{v}`")))
        }
        let step = parse_u64("step", field(meta, "step")?)?;
        let resume_epoch = parse_u64("epoch", field(meta, "epoch")?)?;
        let resume_batch = parse_u64("batch", field(meta, "batch")?)?;
        let lr = f64::from_bits(parse_u64("lr_bits", field(meta, "lr_bits")?)?);
        let raw = field(meta, "loss_bits")?;
        let losses = if raw == "none" {
            Vec::new()
        } else {
            raw.split(',')
                .map(|part| Ok(f64::from_bits(parse_u64("loss_bits", part)?)))
                .collect::<Result<Vec<f64>>>()?
        };
        Ok(RunState { step, resume_epoch, resume_batch, lr, losses })
    }
}

fn assign_distractors(train: &[DialogueExample], seed: u64, epoch: u64) -> Result<Vec<DialogueExample>> {
    train
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = stream_rng(seed, "distractor", &[epoch, i as u64]);
            let d = sample_distractor(train, &mut rng, &ex.target)?;
            let mut e = ex.clone();
            e.distractor = Some(d);
            Ok(e)
        })
        .collect()
}

fn metrics_row(step: u64, stats: &StepStats, lr: f64, val: Option<f64>) -> String {
    format!(
        "{step},{},{},{lr},{}",
        stats.gen_loss,
        stats.disc_loss,
        val.map(|v| v.to_string()).unwrap_or_default()
    )
}

pub const METRICS_HEADER: &str = "step,gen_loss,disc_loss,lr,val_bleu2";

fn write_metrics(out_dir: &Path, rows: &[String]) -> Result<()> {
    let path = out_dir.join("metrics.csv");
    let mut text = String::from(METRICS_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_diagnostics(out_dir: &Path, state: &RunState, err: &Error) {
    let text = format!(
        "training aborted\nstep {}\nlr {}\nrecent generator losses {:?}\n{err}\n",
        state.step, state.lr, state.losses
    );
    let _ = fs::write(out_dir.join("diagnostics.txt"), text);
}

/// What a finished run leaves behind.
#[derive(Debug)]
pub struct RunSummary {
    pub steps: u64,
    pub final_gen_loss: f64,
    pub final_disc_loss: f64,
    pub final_lr: f64,
    pub final_val_bleu2: f64,
    pub disc_samples_per_example: usize,
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
}

/// Runs the epoch loop: shuffled batches, per-epoch distractor assignment,
/// the LR schedule, periodic validation and checkpoints, and a final
/// checkpoint + metrics CSV under `out_dir`. `resume` continues from a saved
/// checkpoint step-for-step.
pub fn run_training(
    cfg: &TrainingConfig,
    corpus: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;

    let raw = read_corpus_file(corpus)?;
    let vocab = Vocabulary::build_from_texts(raw.all_turns(), cfg.vocab_size)?;
    let limits = cfg.limits();
    let examples = encode_corpus(&raw, &vocab, &limits)?;
    let (train, valid) = if cfg.split {
        let (tr, va, _) = split_dataset(examples, cfg.seed)?;
        (tr, va)
    } else {
        (examples.clone(), examples)
    };
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }

    let config_path = out_dir.join("config.txt");
    fs::write(&config_path, cfg.to_text())
        .map_err(|e| Error::io(format!("writing {}", config_path.display()), e))?;
    let vocab_path = out_dir.join("vocab.txt");
    fs::write(&vocab_path, vocab.to_lines())
        .map_err(|e| Error::io(format!("writing {}", vocab_path.display()), e))?;

    let adversarial = cfg.special_case.is_none();
    let (mut params, mut state) = match resume {
        Some(path) => {
            let (params, meta) = load_checkpoint(path)?;
            dims_from_params(&params, cfg)?;
            let state = RunState::from_meta(&meta)?;
            if meta.get("vocab_size").map(String::as_str) != Some(vocab.size().to_string().as_str()) {
                return Err(Error::Checkpoint(format!(
                    "checkpoint vocabulary does not match the corpus ({} tokens)",
                    vocab.size()
                )));
            }
            (params, state)
        }
        None => (register_model(cfg, vocab.size())?, RunState::fresh(cfg.lr)),
    };

    let step_cap = if cfg.max_steps > 0 { cfg.max_steps } else { u64::MAX };
    let epoch_cap = if cfg.max_steps > 0 { u64::MAX } else { cfg.epochs };
    let mut rows: Vec<String> = Vec::new();
    let mut last_stats: Option<StepStats> = None;
    let mut epoch = state.resume_epoch;
    let mut position = (state.resume_epoch, state.resume_batch);

    while epoch < epoch_cap && state.step < step_cap {
        let epoch_examples = if adversarial {
            assign_distractors(&train, cfg.seed, epoch)?
        } else {
            train.clone()
        };
        let mut shuffle_rng = stream_rng(cfg.seed, "shuffle", &[epoch]);
        let batches = make_batches(&epoch_examples, cfg.batch_size, &mut shuffle_rng);
        for (bi, batch) in batches.iter().enumerate() {
            if epoch == state.resume_epoch && (bi as u64) < state.resume_batch {
                continue;
            }
            if state.step >= step_cap {
                break;
            }
            let stats = match train_step(batch, &mut params, cfg, state.step, state.lr) {
                Ok(s) => s,
                Err(e) => {
                    write_diagnostics(out_dir, &state, &e);
                    let _ = write_metrics(out_dir, &rows);
                    return Err(e);
                }
            };
            state.step += 1;
            state.push_loss(stats.gen_loss);
            state.lr = lr_schedule(&state.losses, state.lr, cfg.lr_decay)?;
            position = (epoch, bi as u64 + 1);

            let val = if cfg.validate_every > 0 && state.step % cfg.validate_every == 0 {
                let pairs =
                    eval_pairs(&params, cfg, &vocab, &valid, EvalDecode::Greedy, "validate", &[])?;
                Some(bleu2(&pairs)?)
            } else {
                None
            };
            rows.push(metrics_row(state.step, &stats, state.lr, val));
            if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
                let path = out_dir.join(format!("checkpoint-{}.ckpt", state.step));
                save_checkpoint(&path, &params, &state.meta(position.0, position.1, vocab.size(), cfg))?;
            }
            last_stats = Some(stats);
        }
        epoch += 1;
    }

    let pairs = eval_pairs(&params, cfg, &vocab, &valid, EvalDecode::Greedy, "validate", &[])?;
    let final_val = bleu2(&pairs)?;
    let checkpoint = out_dir.join("model.ckpt");
    save_checkpoint(&checkpoint, &params, &state.meta(position.0, position.1, vocab.size(), cfg))?;
    write_metrics(out_dir, &rows)?;

    let (final_gen_loss, final_disc_loss, disc_samples) = match last_stats {
        Some(s) => (s.gen_loss, s.disc_loss, s.disc_samples_per_example),
        None => (f64::NAN, f64::NAN, 0),
    };
    Ok(RunSummary {
        steps: state.step,
        final_gen_loss,
        final_disc_loss,
        final_lr: state.lr,
        final_val_bleu2: final_val,
        disc_samples_per_example: disc_samples,
        checkpoint,
        metrics_csv: out_dir.join("metrics.csv"),
    })
}

/// A checkpoint plus the config and vocabulary written next to it.
pub struct LoadedRun {
    pub params: ParameterSet,
    pub cfg: TrainingConfig,
    pub vocab: Vocabulary,
    pub meta: BTreeMap<String, String>,
}

/// Loads `checkpoint` along with the sibling `config.txt` and `vocab.txt`,
/// cross-checking the stored geometry against both.
pub fn load_run(checkpoint: &Path) -> Result<LoadedRun> {
    let (params, meta) = load_checkpoint(checkpoint)?;
    let dir = match checkpoint.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let config_path = dir.join("config.txt");
    let cfg_text = fs::read_to_string(&config_path)
        .map_err(|e| Error::io(format!("reading {}", config_path.display()), e))?;
    let cfg = TrainingConfig::parse(&cfg_text)?;
    let vocab_path = dir.join("vocab.txt");
    let vocab_text = fs::read_to_string(&vocab_path)
        .map_err(|e| Error::io(format!("reading {}", vocab_path.display()), e))?;
    let vocab = Vocabulary::from_lines(&vocab_text)?;
    let dims = dims_from_params(&params, &cfg)?;
    if dims.vocab_size != vocab.size() {
        return Err(Error::Checkpoint(format!(
            "checkpoint embeds {} tokens but the vocabulary lists {}",
            dims.vocab_size,
            vocab.size()
        )));
    }
    if let Some(v) = meta.get("vocab_size") {
        if v != &vocab.size().to_string() {
            return Err(Error::Checkpoint(format!(
                "checkpoint metadata names {} vocabulary entries, found {}",
                v,
                vocab.size()
            )));
        }
    }
    Ok(LoadedRun { params, cfg, vocab, meta })
}

/// Encodes a TAB-separated context and decodes one response as text.
pub fn generate_response(
    run: &LoadedRun,
    context_text: &str,
    mode: EvalDecode,
    seed: u64,
) -> Result<String> {
    let limits = run.cfg.limits();
    let turns: Vec<&str> = context_text.split('\t').collect();
    let mut encoded = Vec::new();
    for (i, turn) in turns.iter().enumerate() {
        if turn.split_whitespace().next().is_none() {
            return Err(Error::EmptyInput(format!("context turn {} is empty", i + 1)));
        }
        encoded.push(encode_turn(turn, &run.vocab, limits.max_turn_tokens));
    }
    let start = encoded.len().saturating_sub(limits.max_context_turns);
    let context: Vec<&[u32]> = encoded[start..].iter().map(|t| t.as_slice()).collect();
    let mut rng = stream_rng(seed, "generate", &[]);
    let ids = decode_response(&run.params, &run.cfg, &context, mode, &mut rng)?;
    Ok(run.vocab.decode_ids(&ids).join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;

    const TOY: &str = "\
hello there\tgood morning to you
what time is it\tit is almost noon
where are you going\ti am going home
do you want tea\tyes please with milk
how was the trip\tthe trip was long
is it raining\tno the sky is clear
can you help me\tof course i can help
what did you eat\ti had bread and soup
";

    fn toy_setup(cfg: &TrainingConfig) -> (Vec<DialogueExample>, Vocabulary, ParameterSet) {
        let raw = parse_corpus(TOY).unwrap();
        let vocab = Vocabulary::build_from_texts(raw.all_turns(), cfg.vocab_size).unwrap();
        let examples = encode_corpus(&raw, &vocab, &cfg.limits()).unwrap();
        let params = register_model(cfg, vocab.size()).unwrap();
        (examples, vocab, params)
    }

    fn tiny_config() -> TrainingConfig {
        let mut cfg = TrainingConfig::default();
        cfg.h_dim = 6;
        cfg.layers = 1;
        cfg.vocab_size = 100;
        cfg.batch_size = 4;
        cfg.top_k = 3;
        cfg.lr = 0.2;
        cfg.max_decode_len = 8;
        cfg.epochs = 2;
        cfg.split = false;
        cfg.seed = 7;
        cfg
    }

    fn batch_with_distractors(examples: &[DialogueExample], seed: u64) -> Batch {
        let with = assign_distractors(examples, seed, 0).unwrap();
        Batch::from_examples(&with[..4.min(with.len())])
    }

    #[test]
    fn lr_schedule_decays_after_two_consecutive_increases() {
        assert_eq!(lr_schedule(&[1.0, 1.1, 1.2], 0.5, 0.99).unwrap(), 0.5 * 0.99);
        assert_eq!(lr_schedule(&[1.0, 0.9], 0.5, 0.99).unwrap(), 0.5);
        assert_eq!(lr_schedule(&[1.2, 1.0, 1.1], 0.5, 0.99).unwrap(), 0.5);
        assert_eq!(lr_schedule(&[1.0, 1.2, 1.1], 0.5, 0.99).unwrap(), 0.5);
        assert_eq!(lr_schedule(&[], 0.5, 0.99).unwrap(), 0.5);
        assert!(lr_schedule(&[1.0, 1.1, 1.2], 0.5, 1.0).is_err());
    }

    #[test]
    fn mle_step_skips_the_discriminator_and_learns() {
        let mut cfg = tiny_config();
        cfg.special_case = Some(crate::objectives::SpecialCase::Mle);
        let (examples, _vocab, mut params) = toy_setup(&cfg);
        assert!(params.iter().all(|(_, e)| e.group == ParamGroup::Generator));
        let batch = Batch::from_examples(&examples[..4]);
        let first = train_step(&batch, &mut params, &cfg, 0, cfg.lr).unwrap();
        assert_eq!(first.disc_samples_per_example, 0);
        assert_eq!(first.disc_loss, 0.0);
        let mut last = first.gen_loss;
        for step in 1..30 {
            last = train_step(&batch, &mut params, &cfg, step, cfg.lr).unwrap().gen_loss;
        }
        assert!(last < first.gen_loss, "{last} !< {}", first.gen_loss);
    }

    #[test]
    fn adversarial_step_counts_disc_samples() {
        let mut cfg = tiny_config();
        cfg.bootstrap = true;
        let (examples, _vocab, mut params) = toy_setup(&cfg);
        let batch = batch_with_distractors(&examples, cfg.seed);
        let stats = train_step(&batch, &mut params, &cfg, 0, cfg.lr).unwrap();
        assert_eq!(stats.disc_samples_per_example, 4);

        cfg.bootstrap = false;
        let (examples, _vocab, mut params) = toy_setup(&cfg);
        let batch = batch_with_distractors(&examples, cfg.seed);
        let stats = train_step(&batch, &mut params, &cfg, 0, cfg.lr).unwrap();
        assert_eq!(stats.disc_samples_per_example, 3);
    }

    #[test]
    fn gaussian_and_utterance_paths_run() {
        for (strategy, level) in [
            (SamplingStrategy::Gaussian, DiscLevel::Word),
            (SamplingStrategy::Gaussian, DiscLevel::Utterance),
            (SamplingStrategy::UniformTopK, DiscLevel::Utterance),
        ] {
            let mut cfg = tiny_config();
            cfg.strategy = strategy;
            cfg.level = level;
            let (examples, _vocab, mut params) = toy_setup(&cfg);
            let batch = batch_with_distractors(&examples, cfg.seed);
            let stats = train_step(&batch, &mut params, &cfg, 0, cfg.lr).unwrap();
            assert!(stats.gen_loss.is_finite());
            assert!(stats.disc_loss > 0.0);
        }
    }

    #[test]
    fn isolated_discriminator_update_leaves_generator_params_alone() {
        let cfg = tiny_config();
        let (examples, _vocab, mut params) = toy_setup(&cfg);
        let dims = dims_from_params(&params, &cfg).unwrap();
        let before: BTreeMap<String, Vec<f64>> = params
            .iter()
            .filter(|(_, e)| e.group == ParamGroup::Generator)
            .map(|(n, e)| (n.clone(), e.tensor.values().to_vec()))
            .collect();

        let with = assign_distractors(&examples, cfg.seed, 0).unwrap();
        let ex = &with[0];
        let mut g = Graph::new();
        let encoder = Encoder::bind(&mut g, &params, &dims).unwrap();
        let disc = Disc::bind(&mut g, &params, &dims, cfg.level).unwrap();
        let context: Vec<&[u32]> = ex.context.iter().map(|t| t.as_slice()).collect();
        let ctx = encoder.encode_context(&mut g, &context).unwrap();
        let hp = cfg.hyperparams();
        let gt = disc.score_ids(&mut g, ctx.state, &ex.target).unwrap();
        let neg = disc
            .score_ids(&mut g, ctx.state, ex.distractor.as_ref().unwrap())
            .unwrap();
        let samples = [
            ScoredSample {
                scores: gt.scores,
                label: discriminator_target(SampleKind::GroundTruth, &hp).unwrap(),
            },
            ScoredSample {
                scores: neg.scores,
                label: discriminator_target(SampleKind::Distractor, &hp).unwrap(),
            },
        ];
        let loss = discriminator_loss(&mut g, &samples).unwrap();
        let grads = g.backward(loss).unwrap();
        let mut dg = g.collect_param_grads(&params, &grads, Some(ParamGroup::Discriminator));
        clip_gradients(&mut dg, cfg.clip).unwrap();
        params.sgd_step(&dg, cfg.lr).unwrap();

        for (name, values) in before {
            let now = params.get(&name).unwrap().tensor.values();
            assert_eq!(now, values.as_slice(), "{name} moved");
        }
        let moved = params.iter().any(|(_, e)| {
            e.group == ParamGroup::Discriminator && e.tensor.values().iter().any(|&v| v != 0.0)
        });
        assert!(moved);
    }

    fn temp_dir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("bootchat-trainer-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        fs::create_dir_all(&d).unwrap();
        d
    }

    fn write_toy_corpus(dir: &Path) -> PathBuf {
        let p = dir.join("toy.txt");
        fs::write(&p, TOY).unwrap();
        p
    }

    #[test]
    fn run_training_is_deterministic() {
        let dir = temp_dir("determinism");
        let corpus = write_toy_corpus(&dir);
        let mut cfg = tiny_config();
        cfg.max_steps = 4;
        cfg.validate_every = 2;
        let a = dir.join("a");
        let b = dir.join("b");
        run_training(&cfg, &corpus, &a, None).unwrap();
        run_training(&cfg, &corpus, &b, None).unwrap();
        let ma = fs::read(a.join("metrics.csv")).unwrap();
        let mb = fs::read(b.join("metrics.csv")).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(
            fs::read(a.join("model.ckpt")).unwrap(),
            fs::read(b.join("model.ckpt")).unwrap()
        );
        let text = String::from_utf8(ma).unwrap();
        assert!(text.starts_with("step,gen_loss,disc_loss,lr,val_bleu2\n"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = temp_dir("resume");
        let corpus = write_toy_corpus(&dir);
        let mut cfg = tiny_config();
        cfg.batch_size = 3;
        cfg.max_steps = 5;
        cfg.checkpoint_every = 2;
        let full = dir.join("full");
        let part = dir.join("part");
        run_training(&cfg, &corpus, &full, None).unwrap();
        let resumed = run_training(&cfg, &corpus, &part, Some(&full.join("checkpoint-2.ckpt"))).unwrap();
        assert_eq!(resumed.steps, 5);
        assert_eq!(
            fs::read(full.join("model.ckpt")).unwrap(),
            fs::read(part.join("model.ckpt")).unwrap()
        );
        let full_rows: Vec<String> =
            fs::read_to_string(full.join("metrics.csv")).unwrap().lines().skip(3).map(String::from).collect();
        let part_rows: Vec<String> =
            fs::read_to_string(part.join("metrics.csv")).unwrap().lines().skip(1).map(String::from).collect();
        assert_eq!(full_rows, part_rows);

        let more = dir.join("more");
        let resumed = run_training(&cfg, &corpus, &more, Some(&full.join("checkpoint-4.ckpt"))).unwrap();
        assert_eq!(resumed.steps, 5);
        assert_eq!(
            fs::read(full.join("model.ckpt")).unwrap(),
            fs::read(more.join("model.ckpt")).unwrap()
        );
    }

    #[test]
    fn search_top_k_prefers_smaller_k_on_ties_and_matches_greedy_at_one() {
        let dir = temp_dir("searchk");
        let corpus = write_toy_corpus(&dir);
        let mut cfg = tiny_config();
        cfg.max_steps = 2;
        let out = dir.join("run");
        run_training(&cfg, &corpus, &out, None).unwrap();
        let run = load_run(&out.join("model.ckpt")).unwrap();
        let raw = parse_corpus(TOY).unwrap();
        let examples = encode_corpus(&raw, &run.vocab, &run.cfg.limits()).unwrap();
        let search = search_top_k(&run.params, &run.cfg, &run.vocab, &examples, 5).unwrap();
        assert_eq!(search.curve.len(), 5);
        let greedy = eval_pairs(
            &run.params,
            &run.cfg,
            &run.vocab,
            &examples,
            EvalDecode::Greedy,
            "validate",
            &[],
        )
        .unwrap();
        let greedy_bleu = bleu2(&greedy).unwrap();
        assert!((search.curve[0].1 - greedy_bleu).abs() < 1e-12);
        let best = search.curve.iter().cloned().fold(f64::NEG_INFINITY, |m, (_, v)| m.max(v));
        let first_best = search.curve.iter().find(|(_, v)| *v == best).unwrap().0;
        assert_eq!(search.best_k, first_best);
        assert!(search_top_k(&run.params, &run.cfg, &run.vocab, &[], 5).is_err());
    }

    #[test]
    fn generate_and_score_round_trip() {
        let dir = temp_dir("generate");
        let corpus = write_toy_corpus(&dir);
        let mut cfg = tiny_config();
        cfg.max_steps = 2;
        let out = dir.join("run");
        run_training(&cfg, &corpus, &out, None).unwrap();
        let run = load_run(&out.join("model.ckpt")).unwrap();
        let a = generate_response(&run, "hello there", EvalDecode::Greedy, 3).unwrap();
        let b = generate_response(&run, "hello there", EvalDecode::Greedy, 4).unwrap();
        assert_eq!(a, b);
        let c = generate_response(&run, "hello there", EvalDecode::TopK { k: 2 }, 3).unwrap();
        let d = generate_response(&run, "hello there", EvalDecode::TopK { k: 2 }, 3).unwrap();
        assert_eq!(c, d);
        assert!(generate_response(&run, " \t ", EvalDecode::Greedy, 3).is_err());
        let big = run.vocab.size() + 1;
        assert!(matches!(
            generate_response(&run, "hello", EvalDecode::TopK { k: big }, 3),
            Err(Error::Config(_))
        ));

        let raw = parse_corpus(TOY).unwrap();
        let examples = encode_corpus(&raw, &run.vocab, &run.cfg.limits()).unwrap();
        let context: Vec<&[u32]> = examples[0].context.iter().map(|t| t.as_slice()).collect();
        let q = score_response(&run.params, &run.cfg, &context, &examples[0].target).unwrap();
        assert!((0.0..=1.0).contains(&q));
    }
}
