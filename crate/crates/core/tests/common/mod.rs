//! Reference implementations the acceptance checks compare against. They
//! only use the network's single-step API and do everything else by hand.
#![allow(dead_code)]

use imt_core::decoding::{Constraint, Token};
use imt_core::model::{
    decoder_step, start_state, DecoderState, Direction, EncodedSource, ModelConfig, ModelParameters, TokenId, BOS, EOS,
    PAD,
};

pub fn tiny_model(seed: u64, source_vocab: usize, target_vocab: usize, scale: f64) -> ModelParameters {
    ModelParameters::new(ModelConfig {
        source_vocab,
        target_vocab,
        embedding: 3,
        encoder_hidden: 2,
        decoder_hidden: 3,
        attention: 2,
        readout: 3,
        init_scale: scale,
        seed,
    })
    .unwrap()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|x| (x - m).exp()).sum();
    logits.iter().map(|x| x - m - z.ln()).collect()
}

/// Sum of log-probabilities of `tokens` followed by the terminal symbol.
pub fn sequence_score(params: &ModelParameters, enc: &EncodedSource, direction: Direction, tokens: &[TokenId]) -> f64 {
    let mut state = start_state(params, direction, enc);
    let mut total = 0.0;
    for &t in tokens {
        total += log_softmax(&state.logits)[t.index()];
        state = decoder_step(params, direction, enc, &state, t).unwrap();
    }
    total + log_softmax(&state.logits)[direction.terminal_token().index()]
}

/// Tokens a search may emit freely.
pub fn free_tokens(vocab: usize) -> Vec<TokenId> {
    (0..vocab as u32)
        .map(TokenId)
        .filter(|t| ![PAD, BOS, EOS].contains(t))
        .collect()
}

/// Every sequence of at most `max_tokens` free tokens.
pub fn all_sequences(vocab: usize, max_tokens: usize) -> Vec<Vec<TokenId>> {
    let alphabet = free_tokens(vocab);
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_tokens {
        let mut next = Vec::new();
        for seq in &frontier {
            for &t in &alphabet {
                let mut s: Vec<TokenId> = seq.clone();
                s.push(t);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn is_subsequence(needle: &[TokenId], hay: &[TokenId]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// The finished sequence with the best per-step score among those that
/// contain `required` in order; `max_len` counts the terminal symbol. Ties
/// go to the lexicographically smaller sequence.
pub fn brute_force_best(
    params: &ModelParameters,
    enc: &EncodedSource,
    direction: Direction,
    max_len: usize,
    required: &[TokenId],
) -> Option<(Vec<TokenId>, f64)> {
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for seq in all_sequences(params.config.target_vocab, max_len - 1) {
        if !is_subsequence(required, &seq) {
            continue;
        }
        let score = sequence_score(params, enc, direction, &seq) / (seq.len() + 1) as f64;
        let better = match &best {
            None => true,
            Some((b, s)) => score > *s || (score == *s && seq < *b),
        };
        if better {
            best = Some((seq, score));
        }
    }
    best
}

/// `constraints` occur in `tokens` in order, matching typed surfaces too.
pub fn contains_constraints(tokens: &[Token], constraints: &[Constraint]) -> bool {
    let mut it = tokens.iter();
    constraints
        .iter()
        .all(|c| it.any(|t| t.id == c.id && (c.surface.is_none() || t.surface == c.surface)))
}

/// `‖a − n‖ / (‖a‖ + ‖n‖ + 1e-8)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    diff / (norm(&mut analytic.iter().cloned()) + norm(&mut numeric.iter().cloned()) + 1e-8)
}

/// Corpus BLEU-4 written out directly: clipped n-gram precision with the
/// closest reference length (shorter on ties) for the brevity penalty.
pub fn reference_bleu(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        c += h.len();
        let mut best = rs[0].len();
        for x in rs {
            let (d, bd) = (x.len().abs_diff(h.len()), best.abs_diff(h.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let grams: Vec<&[String]> = h.windows(n).collect();
            totals[n - 1] += grams.len();
            let mut seen: Vec<&[String]> = Vec::new();
            for g in &grams {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let count = grams.iter().filter(|x| *x == g).count();
                let max_ref = rs
                    .iter()
                    .map(|x| if x.len() >= n { x.windows(n).filter(|w| w == g).count() } else { 0 })
                    .max()
                    .unwrap_or(0);
                matches[n - 1] += count.min(max_ref);
            }
        }
    }
    if c == 0 || matches.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..4).map(|n| (matches[n] as f64 / totals[n] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Like [`sequence_score`], continuing from `state` instead of the start.
pub fn score_from(params: &ModelParameters, enc: &EncodedSource, state: &DecoderState, tokens: &[TokenId]) -> f64 {
    let direction = state.direction;
    let mut state = state.clone();
    let mut total = 0.0;
    for &t in tokens {
        total += log_softmax(&state.logits)[t.index()];
        state = decoder_step(params, direction, enc, &state, t).unwrap();
    }
    total + log_softmax(&state.logits)[direction.terminal_token().index()]
}

/// Best continuation of `state` with at most `max_len - 1` free tokens,
/// scored per step including the terminal.
pub fn best_continuation(params: &ModelParameters, enc: &EncodedSource, state: &DecoderState, max_len: usize) -> Vec<TokenId> {
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    for seq in all_sequences(params.config.target_vocab, max_len - 1) {
        let score = score_from(params, enc, state, &seq) / (seq.len() + 1) as f64;
        if best.as_ref().map_or(true, |(b, s)| score > *s || (score == *s && seq < *b)) {
            best = Some((seq, score));
        }
    }
    best.unwrap().0
}
