//! Corpus BLEU and ROUGE-L scoring over token sequences.
//!
//! BLEU-n is the geometric mean of clipped modified n-gram precisions of
//! orders 1..n, pooled over the corpus with integer counts, times the
//! brevity penalty exp(1 - r/c) when the hypothesis corpus is shorter than
//! the reference corpus. No smoothing: a zero precision at any order gives
//! a zero score. ROUGE-L is the mean per-sentence LCS F1. Scores live in
//! [0, 1]; tables conventionally report them times 100.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreReport {
    pub sentences: usize,
    /// BLEU-1 through BLEU-4.
    pub bleu: [f64; 4],
    pub rouge_l: f64,
}

fn check_corpus<T>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::invalid("cannot score an empty corpus"));
    }
    Ok(())
}

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-n for any n ≥ 1.
pub fn bleu_n<T: Eq + Hash + Clone>(hyps: &[Vec<T>], refs: &[Vec<T>], n: usize) -> Result<f64> {
    check_corpus(hyps, refs)?;
    if n == 0 {
        return Err(Error::invalid("BLEU order must be at least 1"));
    }
    let mut matched = vec![0u64; n];
    let mut total = vec![0u64; n];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (hyp, rf) in hyps.iter().zip(refs) {
        hyp_len += hyp.len() as u64;
        ref_len += rf.len() as u64;
        for order in 1..=n {
            let hc = ngram_counts(hyp, order);
            let rc = ngram_counts(rf, order);
            for (gram, count) in &hc {
                total[order - 1] += count;
                let cap = rc.get(gram).copied().unwrap_or(0);
                matched[order - 1] += (*count).min(cap);
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for order in 0..n {
        if matched[order] == 0 || total[order] == 0 {
            return Ok(0.0);
        }
        log_sum += (matched[order] as f64 / total[order] as f64).ln();
    }
    let brevity = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(brevity * (log_sum / n as f64).exp())
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean per-sentence ROUGE-L F1.
pub fn rouge_l<T: Eq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    check_corpus(hyps, refs)?;
    let mut sum = 0.0;
    for (hyp, rf) in hyps.iter().zip(refs) {
        if hyp.is_empty() || rf.is_empty() {
            continue;
        }
        let l = lcs_len(hyp, rf) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / hyp.len() as f64;
        let r = l / rf.len() as f64;
        sum += 2.0 * p * r / (p + r);
    }
    Ok(sum / hyps.len() as f64)
}

/// BLEU-1..4 plus ROUGE-L in one pass.
pub fn score_corpus<T: Eq + Hash + Clone>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<ScoreReport> {
    let mut bleu = [0.0; 4];
    for (i, b) in bleu.iter_mut().enumerate() {
        *b = bleu_n(hyps, refs, i + 1)?;
    }
    Ok(ScoreReport {
        sentences: hyps.len(),
        bleu,
        rouge_l: rouge_l(hyps, refs)?,
    })
}
