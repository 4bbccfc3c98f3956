//! Conversation corpus loading, encoding, splitting, and batching.
//!
//! File format: UTF-8 text, one conversation per line, turns separated by a
//! single TAB, tokens separated by spaces. The final turn of each line is
//! the response to learn; every earlier turn is context.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::vocab::{tokenize, Vocabulary, EOS, PAD};

/// A corpus as read from disk: conversations of raw turn texts.
#[derive(Debug, Clone)]
pub struct RawCorpus {
    pub conversations: Vec<Vec<String>>,
}

impl RawCorpus {
    /// Turns of every conversation, flattened.
    pub fn all_turns(&self) -> impl Iterator<Item = &str> {
        self.conversations.iter().flatten().map(String::as_str)
    }

    /// Final turn of every conversation.
    pub fn responses(&self) -> impl Iterator<Item = &str> {
        self.conversations
            .iter()
            .map(|c| c.last().expect("validated conversations are non-empty").as_str())
    }
}

/// Parses corpus text. Blank lines are skipped; every kept line needs at
/// least two non-empty TAB-separated turns.
pub fn parse_corpus(text: &str) -> Result<RawCorpus> {
    let mut conversations = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let turns: Vec<String> = line.split('\t').map(str::to_string).collect();
        if turns.len() < 2 {
            return Err(Error::Corpus(format!(
                "line {}: a conversation needs at least two turns",
                i + 1
            )));
        }
        if let Some(j) = turns.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::Corpus(format!("line {}: turn {} is empty", i + 1, j + 1)));
        }
        conversations.push(turns);
    }
    if conversations.is_empty() {
        return Err(Error::EmptyInput("corpus has no conversations".into()));
    }
    Ok(RawCorpus { conversations })
}

pub fn read_corpus_file(path: &Path) -> Result<RawCorpus> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading corpus {}", path.display()), e))?;
    parse_corpus(&text)
}

/// Length limits applied while encoding.
#[derive(Debug, Clone, Copy)]
pub struct SequenceLimits {
    /// Maximum encoded turn length, end marker included.
    pub max_turn_tokens: usize,
    /// Maximum number of context turns kept (the most recent ones win).
    pub max_context_turns: usize,
}

impl Default for SequenceLimits {
    fn default() -> Self {
        SequenceLimits {
            max_turn_tokens: 30,
            max_context_turns: 3,
        }
    }
}

/// One training example: encoded context turns and the response, each
/// terminated by the end-of-sequence id. A contrastive distractor response
/// is attached per epoch by the trainer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueExample {
    pub context: Vec<Vec<u32>>,
    pub target: Vec<u32>,
    pub distractor: Option<Vec<u32>>,
}

/// Tokenizes, truncates to `limit - 1` tokens, and appends the end marker.
pub fn encode_turn(text: &str, vocab: &Vocabulary, limit: usize) -> Vec<u32> {
    let mut toks = tokenize(text);
    toks.truncate(limit.saturating_sub(1).max(1));
    let mut ids = vocab.encode_tokens(&toks);
    ids.push(EOS);
    ids
}

/// Encodes every conversation into a [`DialogueExample`].
pub fn encode_corpus(
    raw: &RawCorpus,
    vocab: &Vocabulary,
    limits: &SequenceLimits,
) -> Result<Vec<DialogueExample>> {
    if limits.max_turn_tokens < 2 {
        return Err(Error::InvalidHyperparameter(
            "max_turn_tokens must be at least 2".into(),
        ));
    }
    if limits.max_context_turns < 1 {
        return Err(Error::InvalidHyperparameter(
            "max_context_turns must be at least 1".into(),
        ));
    }
    let mut out = Vec::with_capacity(raw.conversations.len());
    for turns in &raw.conversations {
        let (target_text, context_texts) = turns.split_last().expect("validated");
        let keep_from = context_texts.len().saturating_sub(limits.max_context_turns);
        let context: Vec<Vec<u32>> = context_texts[keep_from..]
            .iter()
            .map(|t| encode_turn(t, vocab, limits.max_turn_tokens))
            .collect();
        let target = encode_turn(target_text, vocab, limits.max_turn_tokens);
        out.push(DialogueExample {
            context,
            target,
            distractor: None,
        });
    }
    Ok(out)
}

/// Deterministic 90/5/5 split: shuffle under the seed, then slice
/// `floor(0.9 n)`, `floor(0.05 n)`, remainder.
pub fn split_dataset(
    examples: Vec<DialogueExample>,
    seed: u64,
) -> Result<(Vec<DialogueExample>, Vec<DialogueExample>, Vec<DialogueExample>)> {
    let n = examples.len();
    if n < 20 {
        return Err(Error::Config(format!(
            "dataset split needs at least 20 examples, got {n}"
        )));
    }
    let mut shuffled = examples;
    let mut rng = crate::streams::stream_rng(seed, "dataset-split", &[]);
    shuffled.shuffle(&mut rng);
    let n_train = (0.9 * n as f64).floor() as usize;
    let n_valid = (0.05 * n as f64).floor() as usize;
    let rest = shuffled.split_off(n_train);
    let (valid, test) = {
        let mut rest = rest;
        let tail = rest.split_off(n_valid);
        (rest, tail)
    };
    Ok((shuffled, valid, test))
}

/// Uniform draw of a ground-truth response different from `exclude`.
pub fn sample_distractor<R: Rng>(
    examples: &[DialogueExample],
    rng: &mut R,
    exclude: &[u32],
) -> Result<Vec<u32>> {
    let eligible: Vec<usize> = (0..examples.len())
        .filter(|&i| examples[i].target != exclude)
        .collect();
    if eligible.is_empty() {
        return Err(Error::DegenerateDataset(
            "every candidate distractor equals the excluded response".into(),
        ));
    }
    let pick = eligible[rng.gen_range(0..eligible.len())];
    Ok(examples[pick].target.clone())
}

/// A padded batch of examples. Matrices are row-major with PAD after each
/// sequence's end marker; length vectors give the unpadded lengths.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub max_turns: usize,
    pub max_turn_len: usize,
    pub max_target_len: usize,
    pub max_distractor_len: usize,
    /// `(size, max_turns, max_turn_len)` flattened.
    pub context_ids: Vec<u32>,
    pub context_turn_counts: Vec<usize>,
    /// `(size, max_turns)` flattened; zero for absent turns.
    pub context_turn_lens: Vec<usize>,
    /// `(size, max_target_len)` flattened.
    pub target_ids: Vec<u32>,
    pub target_lens: Vec<usize>,
    /// `(size, max_distractor_len)` flattened; empty when no example has one.
    pub distractor_ids: Vec<u32>,
    pub distractor_lens: Vec<usize>,
}

impl Batch {
    pub fn from_examples(examples: &[DialogueExample]) -> Self {
        assert!(!examples.is_empty(), "batch of zero examples");
        let size = examples.len();
        let max_turns = examples.iter().map(|e| e.context.len()).max().unwrap();
        let max_turn_len = examples
            .iter()
            .flat_map(|e| e.context.iter().map(Vec::len))
            .max()
            .unwrap();
        let max_target_len = examples.iter().map(|e| e.target.len()).max().unwrap();
        let max_distractor_len = examples
            .iter()
            .filter_map(|e| e.distractor.as_ref().map(Vec::len))
            .max()
            .unwrap_or(0);

        let mut b = Batch {
            size,
            max_turns,
            max_turn_len,
            max_target_len,
            max_distractor_len,
            context_ids: vec![PAD; size * max_turns * max_turn_len],
            context_turn_counts: vec![0; size],
            context_turn_lens: vec![0; size * max_turns],
            target_ids: vec![PAD; size * max_target_len],
            target_lens: vec![0; size],
            distractor_ids: vec![PAD; size * max_distractor_len],
            distractor_lens: vec![0; size],
        };
        for (i, ex) in examples.iter().enumerate() {
            b.context_turn_counts[i] = ex.context.len();
            for (t, turn) in ex.context.iter().enumerate() {
                b.context_turn_lens[i * max_turns + t] = turn.len();
                let base = (i * max_turns + t) * max_turn_len;
                b.context_ids[base..base + turn.len()].copy_from_slice(turn);
            }
            b.target_lens[i] = ex.target.len();
            b.target_ids[i * max_target_len..i * max_target_len + ex.target.len()]
                .copy_from_slice(&ex.target);
            if let Some(d) = &ex.distractor {
                b.distractor_lens[i] = d.len();
                b.distractor_ids[i * max_distractor_len..i * max_distractor_len + d.len()]
                    .copy_from_slice(d);
            }
        }
        b
    }

    /// Context turns of example `i`, trimmed to their real lengths.
    pub fn context(&self, i: usize) -> Vec<&[u32]> {
        (0..self.context_turn_counts[i])
            .map(|t| {
                let len = self.context_turn_lens[i * self.max_turns + t];
                let base = (i * self.max_turns + t) * self.max_turn_len;
                &self.context_ids[base..base + len]
            })
            .collect()
    }

    pub fn target(&self, i: usize) -> &[u32] {
        let base = i * self.max_target_len;
        &self.target_ids[base..base + self.target_lens[i]]
    }

    pub fn distractor(&self, i: usize) -> Option<&[u32]> {
        if self.distractor_lens[i] == 0 {
            return None;
        }
        let base = i * self.max_distractor_len;
        Some(&self.distractor_ids[base..base + self.distractor_lens[i]])
    }
}

/// Shuffles the epoch under `rng` and chunks into batches of `batch_size`;
/// the final batch may be short. Every example appears exactly once.
pub fn make_batches<R: Rng>(
    examples: &[DialogueExample],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let view: Vec<DialogueExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            Batch::from_examples(&view)
        })
        .collect()
}
