//! Token vocabulary with reserved control ids.
//!
//! Ids 0..=3 are fixed: padding, unknown, start of sequence, end of
//! sequence. The remaining capacity holds the most frequent corpus tokens,
//! ties broken by earliest first occurrence. Tokenization is lowercasing
//! plus whitespace splitting, nothing else.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SOS: u32 = 2;
pub const EOS: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const SOS_TOKEN: &str = "<sos>";
pub const EOS_TOKEN: &str = "<eos>";

const RESERVED: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, SOS_TOKEN, EOS_TOKEN];

/// Lowercase and split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary of at most `capacity` ids (reserved ids included)
    /// from an iterator of already tokenized turns.
    pub fn build<'a, I>(turns: I, capacity: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if capacity <= RESERVED.len() {
            return Err(Error::InvalidHyperparameter(format!(
                "vocabulary capacity must exceed {}, got {capacity}",
                RESERVED.len()
            )));
        }
        struct Stat {
            count: u64,
            first_seen: usize,
        }
        let mut stats: BTreeMap<&str, Stat> = BTreeMap::new();
        let mut ordinal = 0usize;
        let mut any = false;
        for turn in turns {
            any = true;
            for tok in turn {
                if RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                stats
                    .entry(tok)
                    .and_modify(|s| s.count += 1)
                    .or_insert(Stat { count: 1, first_seen: ordinal });
                ordinal += 1;
            }
        }
        if !any || stats.is_empty() {
            return Err(Error::EmptyInput("corpus has no tokens".into()));
        }

        let mut ranked: Vec<(&str, Stat)> = stats.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.count
                .cmp(&a.1.count)
                .then(a.1.first_seen.cmp(&b.1.first_seen))
        });
        ranked.truncate(capacity - RESERVED.len());

        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = BTreeMap::new();
        for (i, s) in RESERVED.iter().enumerate() {
            token_to_id.insert(s.to_string(), i as u32);
        }
        for (tok, _) in ranked {
            token_to_id.insert(tok.to_string(), id_to_token.len() as u32);
            id_to_token.push(tok.to_string());
        }
        Ok(Vocabulary { token_to_id, id_to_token })
    }

    /// Builds from raw (untokenized) turn texts.
    pub fn build_from_texts<'a, I>(texts: I, capacity: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let tokenized: Vec<Vec<String>> = texts.into_iter().map(tokenize).collect();
        Vocabulary::build(tokenized.iter().map(|t| t.as_slice()), capacity)
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// Id of a token; unknown tokens map to [`UNK`].
    pub fn encode(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    /// Token string for an id; anything out of range reads as unknown.
    pub fn decode(&self, id: u32) -> &str {
        self.id_to_token
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK_TOKEN)
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.encode(t)).collect()
    }

    pub fn decode_ids(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&id| self.decode(id).to_string()).collect()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    /// Serializes as one token per line in id order (reserved first).
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for t in &self.id_to_token {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    /// Inverse of [`Vocabulary::to_lines`].
    pub fn from_lines(text: &str) -> Result<Self> {
        let id_to_token: Vec<String> = text.lines().map(str::to_string).collect();
        if id_to_token.len() < RESERVED.len() {
            return Err(Error::Corpus("vocabulary file too short".into()));
        }
        for (i, s) in RESERVED.iter().enumerate() {
            if id_to_token[i] != *s {
                return Err(Error::Corpus(format!(
                    "vocabulary file must start with the reserved tokens, found `{}`",
                    id_to_token[i]
                )));
            }
        }
        let mut token_to_id = BTreeMap::new();
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Corpus(format!("duplicate vocabulary entry `{t}`")));
            }
        }
        Ok(Vocabulary { token_to_id, id_to_token })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_of(text: &str, capacity: usize) -> Result<Vocabulary> {
        Vocabulary::build_from_texts([text], capacity)
    }

    #[test]
    fn counts_and_keeps_frequent_tokens() {
        let v = vocab_of("a a b", 6).unwrap();
        assert_eq!(v.size(), 6);
        assert_eq!(v.encode("a"), 4);
        assert_eq!(v.encode("b"), 5);

        // capacity 5 leaves room for exactly one token: the more frequent
        let v = vocab_of("a a b", 5).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.encode("a"), 4);
        assert_eq!(v.encode("b"), UNK);
    }

    #[test]
    fn ties_break_by_first_occurrence() {
        let v = vocab_of("x y", 5).unwrap();
        assert!(v.contains("x"));
        assert!(!v.contains("y"));

        let v = vocab_of("y x y x", 5).unwrap();
        assert!(v.contains("y"));
    }

    #[test]
    fn round_trips_in_vocabulary_tokens() {
        let v = vocab_of("the cat sat on the mat", 20).unwrap();
        for tok in ["the", "cat", "sat", "on", "mat"] {
            assert_eq!(v.decode(v.encode(tok)), tok);
        }
        assert_eq!(v.encode("dog"), UNK);
        assert_eq!(v.decode(UNK), UNK_TOKEN);
        assert_eq!(v.decode(9999), UNK_TOKEN);
    }

    #[test]
    fn tokenize_lowercases() {
        assert_eq!(tokenize("The  CAT\tsat"), vec!["the", "cat", "sat"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn rejects_empty_and_tiny() {
        assert!(matches!(vocab_of("", 10), Err(Error::EmptyInput(_))));
        assert!(matches!(vocab_of("a", 4), Err(Error::InvalidHyperparameter(_))));
    }

    #[test]
    fn serializes_and_restores() {
        let v = vocab_of("alpha beta beta gamma", 8).unwrap();
        let text = v.to_lines();
        let back = Vocabulary::from_lines(&text).unwrap();
        assert_eq!(back.size(), v.size());
        for tok in ["alpha", "beta", "gamma"] {
            assert_eq!(back.encode(tok), v.encode(tok));
        }
        assert!(Vocabulary::from_lines("<pad>\n<unk>\n").is_err());
    }
}
