//! Bootstrapped training targets and the two losses.
//!
//! The generator is trained on weighted log-likelihoods: the ground truth
//! carries weight β, the model's own teacher-forcing argmax output carries 0,
//! and policy samples carry the discriminator's verdict scaled by α. The
//! discriminator is trained with cross-entropy against hard labels (β / 0 /
//! 0), optionally extended by a soft self-bootstrapped label derived from
//! feature similarity.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Objective hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct Hyperparams {
    /// Policy-sample weight scale.
    pub alpha: f64,
    /// Ground-truth weight.
    pub beta: f64,
    /// Softmax temperature.
    pub tau: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { alpha: 1.0, beta: 1.0, tau: 1.0 }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidHyperparameter(format!(
                "beta must lie in [0,1], got {}",
                self.beta
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// What a training sample is, for target construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    GroundTruth,
    TfArgmax,
    Distractor,
    PolicySample,
}

/// Sequence-level generator target weight. Policy samples need the
/// discriminator score `q`.
pub fn generator_target(kind: SampleKind, q: Option<f64>, hp: &Hyperparams) -> Result<f64> {
    match kind {
        SampleKind::GroundTruth => Ok(hp.beta),
        SampleKind::TfArgmax => Ok(0.0),
        SampleKind::PolicySample => {
            let q = q.ok_or_else(|| Error::Contract("policy sample needs a Q value".into()))?;
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Contract(format!("Q must lie in [0,1], got {q}")));
            }
            Ok(hp.alpha * q)
        }
        SampleKind::Distractor => Err(Error::Contract(
            "distractors are discriminator samples, not generator samples".into(),
        )),
    }
}

/// Which coefficient scales the per-token discriminator verdicts in
/// word-level mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordCoefficient {
    /// `(1 - β)`, the literal reading; zero when β = 1.
    Literal,
    /// `α`, consistent with the sequence-level rule (the default).
    Consistent,
}

/// Per-token generator target weight in word-level mode.
pub fn generator_target_word(
    kind: SampleKind,
    d: f64,
    hp: &Hyperparams,
    coefficient: WordCoefficient,
) -> f64 {
    match kind {
        SampleKind::GroundTruth => hp.beta,
        SampleKind::TfArgmax => 0.0,
        _ => {
            let coef = match coefficient {
                WordCoefficient::Literal => 1.0 - hp.beta,
                WordCoefficient::Consistent => hp.alpha,
            };
            coef * d
        }
    }
}

/// One sequence's contribution with a single weight across its tokens.
pub struct SequenceTerm {
    pub step_log_probs: Vec<NodeId>,
    pub weight: f64,
}

/// One sequence's contribution with per-token weights.
pub struct WordTerm {
    pub step_log_probs: Vec<NodeId>,
    pub weights: Vec<f64>,
}

/// `-Σ weight · Σ_j log p_j` over all terms. Weights are constants; zero
/// weights contribute nothing, so an all-zero batch gives a loss of exactly
/// zero.
pub fn generator_loss_sequence_level(g: &mut Graph, terms: &[SequenceTerm]) -> NodeId {
    let mut parts = Vec::new();
    for term in terms {
        if term.weight == 0.0 || term.step_log_probs.is_empty() {
            continue;
        }
        let stacked = g.stack_scalars(&term.step_log_probs);
        let total = g.sum(stacked);
        parts.push(g.affine(total, -term.weight, 0.0));
    }
    sum_or_zero(g, &parts)
}

/// `-Σ_j weight_j · log p_j` over all terms; weights are stop-gradient
/// constants even when they came from discriminator outputs.
pub fn generator_loss_word_level(g: &mut Graph, terms: &[WordTerm]) -> Result<NodeId> {
    let mut parts = Vec::new();
    for term in terms {
        if term.weights.len() != term.step_log_probs.len() {
            return Err(Error::Contract(format!(
                "{} weights for {} tokens",
                term.weights.len(),
                term.step_log_probs.len()
            )));
        }
        if term.step_log_probs.is_empty() || term.weights.iter().all(|&w| w == 0.0) {
            continue;
        }
        let stacked = g.stack_scalars(&term.step_log_probs);
        let w = g.constant(Tensor::vector(term.weights.clone()));
        let weighted = g.dot(w, stacked);
        parts.push(g.affine(weighted, -1.0, 0.0));
    }
    Ok(sum_or_zero(g, &parts))
}

/// One discriminator sample: its score nodes (one for utterance level, one
/// per token for word level) and the label they are all matched against.
pub struct ScoredSample {
    pub scores: Vec<NodeId>,
    pub label: f64,
}

/// Cross-entropy against the labels, token-averaged within each sample and
/// averaged over samples.
pub fn discriminator_loss(g: &mut Graph, samples: &[ScoredSample]) -> Result<NodeId> {
    let mut per_sample = Vec::new();
    for s in samples {
        if !(0.0..=1.0).contains(&s.label) {
            return Err(Error::Contract(format!("label must lie in [0,1], got {}", s.label)));
        }
        if s.scores.is_empty() {
            return Err(Error::EmptyInput("discriminator sample with no scores".into()));
        }
        let losses: Vec<NodeId> = s.scores.iter().map(|&q| g.bce(q, s.label)).collect();
        let stacked = g.stack_scalars(&losses);
        let total = g.sum(stacked);
        per_sample.push(g.affine(total, 1.0 / losses.len() as f64, 0.0));
    }
    if per_sample.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let stacked = g.stack_scalars(&per_sample);
    let total = g.sum(stacked);
    Ok(g.affine(total, 1.0 / per_sample.len() as f64, 0.0))
}

/// Hard discriminator label for a sample kind: β for the ground truth, 0
/// for the model's teacher-forcing argmax and for distractors.
pub fn discriminator_target(kind: SampleKind, hp: &Hyperparams) -> Result<f64> {
    match kind {
        SampleKind::GroundTruth => Ok(hp.beta),
        SampleKind::TfArgmax | SampleKind::Distractor => Ok(0.0),
        SampleKind::PolicySample => Err(Error::Contract(
            "policy samples take the bootstrapped soft label, not a hard one".into(),
        )),
    }
}

/// Soft label for the generator's autoregressive sample: cosine similarity
/// of discriminator features, clamped at zero. Bit-identical inputs score
/// exactly 1. The caller must treat the result as a constant; gradients
/// never flow through a label.
pub fn bootstrap_similarity(sample_features: &[f64], truth_features: &[f64]) -> Result<f64> {
    if sample_features.len() != truth_features.len() {
        return Err(Error::Contract(format!(
            "feature lengths differ: {} vs {}",
            sample_features.len(),
            truth_features.len()
        )));
    }
    if sample_features == truth_features {
        if sample_features.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateFeature("zero-norm feature vector".into()));
        }
        return Ok(1.0);
    }
    let dot: f64 = sample_features
        .iter()
        .zip(truth_features)
        .map(|(a, b)| a * b)
        .sum();
    let na: f64 = sample_features.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = truth_features.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateFeature("zero-norm feature vector".into()));
    }
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

/// Degenerate objective configurations that skip the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialCase {
    Mle,
    HardBootstrap,
}

/// Weights for the two teacher-forcing-derived samples under a special case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpecialCaseWeights {
    pub ground_truth: f64,
    pub tf_argmax: f64,
}

pub fn make_special_case_config(kind: SpecialCase, hp: &Hyperparams) -> SpecialCaseWeights {
    match kind {
        SpecialCase::Mle => SpecialCaseWeights { ground_truth: 1.0, tf_argmax: 0.0 },
        SpecialCase::HardBootstrap => SpecialCaseWeights {
            ground_truth: hp.beta,
            tf_argmax: 1.0 - hp.beta,
        },
    }
}

fn sum_or_zero(g: &mut Graph, parts: &[NodeId]) -> NodeId {
    match parts {
        [] => g.constant(Tensor::scalar(0.0)),
        [one] => *one,
        many => {
            let stacked = g.stack_scalars(many);
            g.sum(stacked)
        }
    }
}
