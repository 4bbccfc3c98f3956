//! Positional token entropy of a corpus.
//!
//! For each position p (1-based), the entropy in bits of the distribution of
//! tokens observed at p across all sequences long enough to reach it. Early
//! positions in dialogue data tend to be predictable, middles diverse, which
//! is the motivation for weighting schemes that vary along the sequence.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::corpus::RawCorpus;
use crate::vocab::tokenize;

/// Which utterances contribute to the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyScope {
    /// Final turns only (the default).
    Responses,
    /// Every turn of every conversation.
    AllUtterances,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionEntropy {
    /// 1-based position.
    pub position: usize,
    pub entropy_bits: f64,
    /// Number of sequences long enough to contribute a token here.
    pub support: usize,
}

/// Entropy in bits of a token histogram.
pub fn entropy_bits<S: Ord>(counts: &BTreeMap<S, usize>) -> f64 {
    let total: usize = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut h = 0.0;
    for &c in counts.values() {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.log2();
        }
    }
    h
}

/// Per-position entropy over the selected utterances of `corpus`.
pub fn positional_entropy(corpus: &RawCorpus, scope: EntropyScope) -> Result<Vec<PositionEntropy>> {
    let sequences: Vec<Vec<String>> = match scope {
        EntropyScope::Responses => corpus.responses().map(tokenize).collect(),
        EntropyScope::AllUtterances => corpus.all_turns().map(tokenize).collect(),
    };
    let max_len = sequences.iter().map(Vec::len).max().unwrap_or(0);
    if max_len == 0 {
        return Err(Error::EmptyInput("no tokens to analyze".into()));
    }
    let mut out = Vec::with_capacity(max_len);
    for p in 0..max_len {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in &sequences {
            if let Some(tok) = seq.get(p) {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let support = counts.values().sum();
        out.push(PositionEntropy {
            position: p + 1,
            entropy_bits: entropy_bits(&counts),
            support,
        });
    }
    Ok(out)
}

/// CSV with header `position,entropy_bits,support`.
pub fn write_entropy_csv<W: Write>(rows: &[PositionEntropy], w: &mut W) -> Result<()> {
    let ctx = || "writing entropy csv".to_string();
    writeln!(w, "position,entropy_bits,support").map_err(|e| Error::io(ctx(), e))?;
    for r in rows {
        writeln!(w, "{},{},{}", r.position, r.entropy_bits, r.support)
            .map_err(|e| Error::io(ctx(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_corpus;

    #[test]
    fn hand_checked_distributions() {
        let counts: BTreeMap<&str, usize> = [("a", 3), ("b", 1)].into_iter().collect();
        assert!((entropy_bits(&counts) - 0.8112781244591328).abs() < 1e-12);

        let uniform: BTreeMap<&str, usize> = [("a", 2), ("b", 2)].into_iter().collect();
        assert!((entropy_bits(&uniform) - 1.0).abs() < 1e-12);

        let single: BTreeMap<&str, usize> = [("i", 9)].into_iter().collect();
        assert_eq!(entropy_bits(&single), 0.0);
    }

    #[test]
    fn responses_scope_uses_final_turns() {
        let corpus = parse_corpus(concat!(
            "hi\ti am glad\n",
            "yo\ti was here\n",
            "hm\ti am done\n",
            "ok\ti was late\n",
        ))
        .unwrap();
        let rows = positional_entropy(&corpus, EntropyScope::Responses).unwrap();
        assert_eq!(rows.len(), 3);
        // position 1: always "i"
        assert_eq!(rows[0].entropy_bits, 0.0);
        assert_eq!(rows[0].support, 4);
        // position 2: am, was even split
        assert!((rows[1].entropy_bits - 1.0).abs() < 1e-12);
        // position 3: four distinct tokens
        assert!((rows[2].entropy_bits - 2.0).abs() < 1e-12);

        let all = positional_entropy(&corpus, EntropyScope::AllUtterances).unwrap();
        // context turns (hi/yo/hm/ok) now contribute at position 1
        assert!(all[0].entropy_bits > 1.9);
        assert_eq!(all[0].support, 8);
    }

    #[test]
    fn entropy_is_bounded_by_distinct_tokens() {
        let corpus = parse_corpus("a\tx y\nb\tx z\nc\tw z\n").unwrap();
        let rows = positional_entropy(&corpus, EntropyScope::Responses).unwrap();
        for row in &rows {
            assert!(row.entropy_bits >= 0.0);
            assert!(row.entropy_bits <= (row.support as f64).log2() + 1e-12);
        }
    }

    #[test]
    fn csv_shape() {
        let rows = vec![
            PositionEntropy { position: 1, entropy_bits: 0.0, support: 4 },
            PositionEntropy { position: 2, entropy_bits: 1.0, support: 3 },
        ];
        let mut buf = Vec::new();
        write_entropy_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "position,entropy_bits,support\n1,0,4\n2,1,3\n");
    }
}
