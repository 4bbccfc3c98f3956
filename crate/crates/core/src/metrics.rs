//! Text generation metrics: corpus-level BLEU-2, mean bigram F1 (ROUGE-2),
//! distinct n-gram ratios, and the normalized average sequence length.
//!
//! All functions take token sequences that were produced by the training
//! tokenizer and already stripped of control tokens.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};

/// A hypothesis/reference pair for reference-based metrics.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU with uniform weights over 1- and 2-gram modified
/// precisions: clipped n-gram matches are pooled over all pairs, the score
/// is the brevity-penalized geometric mean, and any zero precision zeroes
/// the whole score (no smoothing).
pub fn bleu2(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no evaluation pairs".into()));
    }
    let mut clipped = [0usize; 2];
    let mut totals = [0usize; 2];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for pair in pairs {
        hyp_len += pair.hypothesis.len();
        ref_len += pair.reference.len();
        for n in 1..=2 {
            let hyp = ngram_counts(&pair.hypothesis, n);
            let rf = ngram_counts(&pair.reference, n);
            for (gram, &c) in &hyp {
                totals[n - 1] += c;
                clipped[n - 1] += c.min(rf.get(gram).copied().unwrap_or(0));
            }
        }
    }
    if totals.iter().any(|&t| t == 0) || clipped.iter().any(|&c| c == 0) {
        return Ok(0.0);
    }
    let p1 = clipped[0] as f64 / totals[0] as f64;
    let p2 = clipped[1] as f64 / totals[1] as f64;
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * (p1 * p2).sqrt())
}

/// Mean over pairs of bigram F1. A pair where either side lacks bigrams
/// scores zero.
pub fn rouge2(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no evaluation pairs".into()));
    }
    let mut total = 0.0;
    for pair in pairs {
        let hyp = ngram_counts(&pair.hypothesis, 2);
        let rf = ngram_counts(&pair.reference, 2);
        let hyp_total: usize = hyp.values().sum();
        let ref_total: usize = rf.values().sum();
        if hyp_total == 0 || ref_total == 0 {
            continue;
        }
        let overlap: usize = hyp
            .iter()
            .map(|(gram, &c)| c.min(rf.get(gram).copied().unwrap_or(0)))
            .sum();
        if overlap == 0 {
            continue;
        }
        let p = overlap as f64 / hyp_total as f64;
        let r = overlap as f64 / ref_total as f64;
        total += 2.0 * p * r / (p + r);
    }
    Ok(total / pairs.len() as f64)
}

/// Distinct n-grams across all hypotheses divided by the total n-gram
/// count; zero when there are no n-grams at all.
pub fn distinct_n(hypotheses: &[Vec<String>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidHyperparameter("n-gram order must be positive".into()));
    }
    let mut distinct: BTreeMap<&[String], ()> = BTreeMap::new();
    let mut total = 0usize;
    for hyp in hypotheses {
        if hyp.len() >= n {
            for w in hyp.windows(n) {
                distinct.insert(w, ());
                total += 1;
            }
        }
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(distinct.len() as f64 / total as f64)
}

/// Mean hypothesis/reference length ratio.
pub fn nasl(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no evaluation pairs".into()));
    }
    let mut total = 0.0;
    for pair in pairs {
        if pair.reference.is_empty() {
            return Err(Error::Contract("reference with no tokens".into()));
        }
        total += pair.hypothesis.len() as f64 / pair.reference.len() as f64;
    }
    Ok(total / pairs.len() as f64)
}

/// The full evaluation suite in report order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub bleu2: f64,
    pub rouge2: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub nasl: f64,
}

pub fn evaluate(pairs: &[EvalPair]) -> Result<EvalReport> {
    let hyps: Vec<Vec<String>> = pairs.iter().map(|p| p.hypothesis.clone()).collect();
    Ok(EvalReport {
        bleu2: bleu2(pairs)?,
        rouge2: rouge2(pairs)?,
        dist1: distinct_n(&hyps, 1)?,
        dist2: distinct_n(&hyps, 2)?,
        nasl: nasl(pairs)?,
    })
}

/// CSV with header `metric,value` and exactly the five suite rows.
pub fn write_eval_csv<W: Write>(report: &EvalReport, w: &mut W) -> Result<()> {
    let ctx = || "writing evaluation csv".to_string();
    writeln!(w, "metric,value").map_err(|e| Error::io(ctx(), e))?;
    for (name, value) in [
        ("bleu2", report.bleu2),
        ("rouge2", report.rouge2),
        ("dist1", report.dist1),
        ("dist2", report.dist2),
        ("nasl", report.nasl),
    ] {
        writeln!(w, "{name},{value}").map_err(|e| Error::io(ctx(), e))?;
    }
    Ok(())
}
