//! Corpus-level BLEU: geometric mean of clipped n-gram precisions times the
//! brevity penalty, single reference per hypothesis, scaled to [0,100].
//! Unsmoothed by default (any zero precision gives score 0); the optional +1
//! smoothing for n >= 2 exists for tiny desk corpora and is off in reports.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BleuStats {
    pub max_n: usize,
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    /// Modified n-gram precision (clipped counts), `n` starting at 1.
    pub fn precision(&self, n: usize) -> f64 {
        if self.totals[n - 1] == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / self.totals[n - 1] as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    pub fn score(&self, smoothing: bool) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 1..=self.max_n {
            let (mut m, mut t) = (self.matches[n - 1] as f64, self.totals[n - 1] as f64);
            if smoothing && n >= 2 {
                m += 1.0;
                t += 1.0;
            }
            if m == 0.0 || t == 0.0 {
                return 0.0;
            }
            log_sum += (m / t).ln();
        }
        100.0 * self.brevity_penalty() * (log_sum / self.max_n as f64).exp()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// Accumulate clipped n-gram counts over the whole corpus.
pub fn bleu_stats(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<BleuStats> {
    assert!(max_n >= 1);
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if refs.is_empty() {
        return Err(Error::EmptyReference(0));
    }
    if let Some(i) = refs.iter().position(|r| r.is_empty()) {
        return Err(Error::EmptyReference(i));
    }
    let mut stats = BleuStats {
        max_n,
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        hyp_len: 0,
        ref_len: 0,
    };
    for (hyp, reference) in hyps.iter().zip(refs) {
        stats.hyp_len += hyp.len();
        stats.ref_len += reference.len();
        for n in 1..=max_n {
            let hyp_counts = ngram_counts(hyp, n);
            if hyp_counts.is_empty() {
                continue;
            }
            let ref_counts = ngram_counts(reference, n);
            for (gram, &count) in &hyp_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                stats.matches[n - 1] += count.min(clip);
                stats.totals[n - 1] += count;
            }
        }
    }
    Ok(stats)
}

/// Corpus BLEU in [0, 100].
pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize, smoothing: bool) -> Result<f64> {
    Ok(bleu_stats(hyps, refs, max_n)?.score(smoothing))
}
