use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics for BLEU; sums of per-sentence stats give corpus
/// stats.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    /// Clipped n-gram matches, n = 1..=4.
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    /// Length of the reference closest to the hypothesis (shorter wins ties).
    pub ref_len: u64,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn sentence<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], refs: &[Vec<R>]) -> Self {
        let mut stats = Self {
            hyp_len: hyp.len() as u64,
            ref_len: closest_length(hyp.len(), refs.iter().map(Vec::len)) as u64,
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<Vec<&str>, u64> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
            stats.matches[n - 1] = counts
                .iter()
                .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
                .sum();
        }
        stats
    }

    fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp()
    }

    /// Geometric mean of the clipped precisions times the brevity penalty.
    /// Zero when any order has no match.
    pub fn bleu(&self) -> f64 {
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            if self.matches[n] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[n] as f64 / self.totals[n] as f64).ln();
        }
        self.brevity_penalty() * (log_sum / MAX_ORDER as f64).exp()
    }

    /// Like [`bleu`](Self::bleu) with add-one smoothing on orders 2 and up.
    pub fn smoothed_bleu(&self) -> f64 {
        if self.matches[0] == 0 {
            return 0.0;
        }
        let mut log_sum = (self.matches[0] as f64 / self.totals[0] as f64).ln();
        for n in 1..MAX_ORDER {
            log_sum += ((self.matches[n] + 1) as f64 / (self.totals[n] + 1) as f64).ln();
        }
        self.brevity_penalty() * (log_sum / MAX_ORDER as f64).exp()
    }
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

impl std::iter::Sum for BleuStats {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut total = Self::default();
        for s in iter {
            total += s;
        }
        total
    }
}

fn closest_length(hyp: usize, refs: impl Iterator<Item = usize>) -> usize {
    refs.min_by_key(|&r| (r.abs_diff(hyp), r)).unwrap_or(0)
}

/// Corpus BLEU over `hyps`, each with one or more references.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<Vec<R>>]) -> Result<f64> {
    Ok(corpus_stats(hyps, refs)?.bleu())
}

pub fn corpus_stats<S: AsRef<str>, R: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<Vec<R>>]) -> Result<BleuStats> {
    if hyps.is_empty() {
        return Err(Error::Empty("hypothesis set"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    if refs.iter().any(Vec::is_empty) {
        return Err(Error::Empty("reference set"));
    }
    Ok(hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| BleuStats::sentence(h, r))
        .sum())
}

pub fn sentence_bleu_smoothed<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], refs: &[Vec<R>]) -> f64 {
    BleuStats::sentence(hyp, refs).smoothed_bleu()
}
