use std::cmp::Ordering;
use std::sync::Arc;

use super::{Constraint, Hypothesis, Origin, SearchConfig, Token};
use crate::error::{Error, Result};
use crate::memory::{step_distribution, RevisionMemory};
use crate::model::{decoder_step, start_state, DecoderState, Direction, EncodedSource, ModelParameters, TokenId, PAD};

/// Everything a search reads: parameters, the encoded source and, for the
/// forward decoder, an optional revision memory.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub params: &'a ModelParameters,
    pub encoded: &'a EncodedSource,
    pub memory: Option<&'a RevisionMemory>,
}

impl<'a> SearchContext<'a> {
    pub fn new(params: &'a ModelParameters, encoded: &'a EncodedSource) -> Self {
        Self {
            params,
            encoded,
            memory: None,
        }
    }

    pub fn with_memory(mut self, memory: Option<&'a RevisionMemory>) -> Self {
        self.memory = memory;
        self
    }
}

/// Plain beam search from the start symbol. Backward hypotheses come out in
/// generation order, i.e. reversed.
pub fn beam_search(ctx: SearchContext, direction: Direction, config: SearchConfig) -> Result<Hypothesis> {
    grid_beam_search(ctx, direction, &[], config)
}

/// Beam search over a grid indexed by the number of constraints covered.
/// The result contains every constraint, in order.
pub fn grid_beam_search(
    ctx: SearchContext,
    direction: Direction,
    constraints: &[Constraint],
    config: SearchConfig,
) -> Result<Hypothesis> {
    let start = Arc::new(start_state(ctx.params, direction, ctx.encoded));
    grid_search_from(ctx, start, constraints, None, config)
}

#[derive(Clone)]
struct Node {
    tokens: Vec<Token>,
    score: f64,
    positions: Vec<usize>,
    states: Vec<Arc<DecoderState>>,
}

struct Candidate {
    cell: usize,
    parent: usize,
    /// `None` is the terminal symbol.
    token: Option<Token>,
    score: f64,
}

fn compare_sequences(a: (&[Token], Option<&Token>), b: (&[Token], Option<&Token>), terminal: TokenId) -> Ordering {
    fn key(t: Option<&Token>, terminal: TokenId) -> (TokenId, Option<&str>) {
        match t {
            Some(t) => (t.id, t.surface.as_deref()),
            None => (terminal, None),
        }
    }
    let left = a.0.iter().map(Some).chain(std::iter::once(a.1));
    let right = b.0.iter().map(Some).chain(std::iter::once(b.1));
    for (x, y) in left.zip(right) {
        let ord = key(x, terminal).cmp(&key(y, terminal));
        if ord != Ordering::Equal {
            return ord;
        }
    }
    a.0.len().cmp(&b.0.len())
}

/// Grid beam search continuing from `start`. `banned_first` may not be
/// generated freely at the first step.
pub fn grid_search_from(
    ctx: SearchContext,
    start: Arc<DecoderState>,
    constraints: &[Constraint],
    banned_first: Option<TokenId>,
    config: SearchConfig,
) -> Result<Hypothesis> {
    if config.beam_size == 0 || config.max_len == 0 {
        return Err(Error::Config("beam_size and max_len must be at least 1".into()));
    }
    let params = ctx.params;
    let direction = start.direction;
    let vocab = params.config.target_vocab;
    let terminal = direction.terminal_token();
    let start_token = direction.start_token();
    for k in constraints {
        if k.id.index() >= vocab {
            return Err(Error::InvalidToken { id: k.id.0, size: vocab });
        }
        if k.id == terminal || k.id == start_token {
            return Err(Error::Contract("constraints cannot pin BOS or EOS".into()));
        }
    }
    let total = constraints.len();
    let beam = config.beam_size;

    let mut cells: Vec<Vec<Node>> = vec![Vec::new(); total + 1];
    cells[0].push(Node {
        tokens: Vec::new(),
        score: 0.0,
        positions: Vec::new(),
        states: vec![start],
    });
    let mut finished: Vec<Node> = Vec::new();
    let mut last_full: Vec<Node> = Vec::new();

    for t in 0..config.max_len {
        let steps_left = config.max_len - t - 1;
        let mut candidates: Vec<Vec<Candidate>> = (0..=total).map(|_| Vec::new()).collect();
        for (c, cell) in cells.iter().enumerate() {
            for (i, node) in cell.iter().enumerate() {
                let dist = step_distribution(params, ctx.memory, node.states.last().unwrap());
                if c == total {
                    candidates[c].push(Candidate {
                        cell: c,
                        parent: i,
                        token: None,
                        score: node.score + dist.vocab[terminal.index()].ln(),
                    });
                }
                // room left for the remaining constraints and the terminal
                if total - c < steps_left {
                    let banned = if t == 0 { banned_first } else { None };
                    let mut options: Vec<(f64, Token)> = Vec::new();
                    for id in 0..vocab {
                        let id = TokenId(id as u32);
                        if id == PAD || id == terminal || id == start_token || Some(id) == banned {
                            continue;
                        }
                        let p = dist.vocab[id.index()];
                        if p > 0.0 {
                            let origin = if dist.is_copy(id) { Origin::Copy } else { Origin::Model };
                            options.push((p.ln(), Token { id, surface: None, origin }));
                        }
                    }
                    if banned != Some(crate::model::UNK) {
                        for (surface, p) in &dist.oov {
                            if *p > 0.0 {
                                options.push((
                                    p.ln(),
                                    Token {
                                        id: crate::model::UNK,
                                        surface: Some(surface.clone()),
                                        origin: Origin::Copy,
                                    },
                                ));
                            }
                        }
                    }
                    let by_score = |a: &(f64, Token), b: &(f64, Token)| {
                        b.0.total_cmp(&a.0).then_with(|| a.1.sort_key().cmp(&b.1.sort_key()))
                    };
                    if options.len() > beam {
                        options.select_nth_unstable_by(beam - 1, by_score);
                        options.truncate(beam);
                    }
                    for (lp, token) in options {
                        candidates[c].push(Candidate {
                            cell: c,
                            parent: i,
                            token: Some(token),
                            score: node.score + lp,
                        });
                    }
                }
                if c < total && total - c <= steps_left {
                    let k = &constraints[c];
                    let lp = if k.id == PAD {
                        0.0
                    } else {
                        dist.constraint_probability(k.id, k.surface.as_deref()).ln()
                    };
                    candidates[c + 1].push(Candidate {
                        cell: c,
                        parent: i,
                        token: Some(k.token()),
                        score: node.score + lp,
                    });
                }
            }
        }

        let mut next: Vec<Vec<Node>> = (0..=total).map(|_| Vec::new()).collect();
        for (target, mut list) in candidates.into_iter().enumerate() {
            list.sort_by(|a, b| {
                b.score.total_cmp(&a.score).then_with(|| {
                    let pa = &cells[a.cell][a.parent];
                    let pb = &cells[b.cell][b.parent];
                    compare_sequences((&pa.tokens, a.token.as_ref()), (&pb.tokens, b.token.as_ref()), terminal)
                })
            });
            list.truncate(beam);
            for cand in list {
                let parent = &cells[cand.cell][cand.parent];
                match cand.token {
                    None => finished.push(Node {
                        tokens: parent.tokens.clone(),
                        score: cand.score,
                        positions: parent.positions.clone(),
                        states: parent.states.clone(),
                    }),
                    Some(token) => {
                        let prev = parent.states.last().unwrap();
                        let state = decoder_step(params, direction, ctx.encoded, prev, token.id)?;
                        let mut node = Node {
                            tokens: parent.tokens.clone(),
                            score: cand.score,
                            positions: parent.positions.clone(),
                            states: parent.states.clone(),
                        };
                        if target > cand.cell {
                            node.positions.push(node.tokens.len());
                        }
                        node.tokens.push(token);
                        node.states.push(Arc::new(state));
                        next[target].push(node);
                    }
                }
            }
        }
        if next[total].is_empty() && !cells[total].is_empty() {
            last_full = std::mem::take(&mut cells[total]);
        }
        cells = next;
        if finished.len() >= beam || cells.iter().all(Vec::is_empty) {
            break;
        }
    }
    if !cells[total].is_empty() {
        last_full = std::mem::take(&mut cells[total]);
    }

    let pick = |nodes: Vec<Node>, done: bool| -> Option<Hypothesis> {
        nodes
            .into_iter()
            .map(|n| Hypothesis {
                tokens: n.tokens,
                score: n.score,
                finished: done,
                constraint_positions: n.positions,
                states: n.states,
            })
            .min_by(|a, b| {
                b.normalized_score()
                    .total_cmp(&a.normalized_score())
                    .then_with(|| compare_sequences((&a.tokens, None), (&b.tokens, None), terminal))
            })
    };
    if let Some(h) = pick(finished, true) {
        return Ok(h);
    }
    match pick(last_full, false) {
        Some(h) => {
            log::debug!("no finished hypothesis within {} steps", config.max_len);
            Ok(h)
        }
        None => Err(Error::Unsatisfiable {
            max_len: config.max_len,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::contains_in_order;
    use crate::math::tensor::argmax;
    use crate::model::{encode_source, ModelConfig, EOS};

    fn model(seed: u64, vocab: usize) -> ModelParameters {
        ModelParameters::new(ModelConfig {
            source_vocab: 8,
            target_vocab: vocab,
            embedding: 4,
            encoder_hidden: 3,
            decoder_hidden: 4,
            attention: 3,
            readout: 4,
            init_scale: 1.5,
            seed,
        })
        .unwrap()
    }

    fn source() -> Vec<TokenId> {
        vec![TokenId(4), TokenId(6), TokenId(5)]
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..10 {
            let p = model(seed, 9);
            let enc = encode_source(&p, &source()).unwrap();
            let got = beam_search(SearchContext::new(&p, &enc), Direction::Forward, SearchConfig { beam_size: 1, max_len: 8 })
                .unwrap();

            let mut state = start_state(&p, Direction::Forward, &enc);
            let mut expected = Vec::new();
            // the eighth step can only emit the terminal
            for _ in 0..7 {
                let mut logits = state.logits.clone();
                logits[PAD.index()] = f64::NEG_INFINITY;
                logits[crate::model::BOS.index()] = f64::NEG_INFINITY;
                let best = TokenId(argmax(&logits) as u32);
                if best == EOS {
                    break;
                }
                expected.push(best);
                state = decoder_step(&p, Direction::Forward, &enc, &state, best).unwrap();
            }
            assert_eq!(got.ids(), expected, "seed {seed}");
        }
    }

    #[test]
    fn empty_constraints_equal_beam_search() {
        let p = model(3, 9);
        let enc = encode_source(&p, &source()).unwrap();
        let config = SearchConfig { beam_size: 4, max_len: 9 };
        let ctx = SearchContext::new(&p, &enc);
        let a = beam_search(ctx, Direction::Forward, config).unwrap();
        let b = grid_beam_search(ctx, Direction::Forward, &[], config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constraints_appear_in_order_at_reported_positions() {
        for seed in 0..20 {
            let p = model(seed, 9);
            let enc = encode_source(&p, &source()).unwrap();
            let cons = [Constraint::new(TokenId(7)), Constraint::new(TokenId(5)), Constraint::new(TokenId(7))];
            for dir in [Direction::Forward, Direction::Backward] {
                let h = grid_beam_search(SearchContext::new(&p, &enc), dir, &cons, SearchConfig { beam_size: 3, max_len: 9 })
                    .unwrap();
                assert!(contains_in_order(&h.tokens, &cons));
                assert_eq!(h.constraint_positions.len(), 3);
                assert!(h.constraint_positions.windows(2).all(|w| w[0] < w[1]));
                for (k, pos) in h.constraint_positions.iter().enumerate() {
                    assert_eq!(h.tokens[*pos].id, cons[k].id);
                    assert_eq!(h.tokens[*pos].origin, Origin::Constraint);
                }
            }
        }
    }

    #[test]
    fn unsatisfiable_and_partial_results() {
        let p = model(1, 9);
        let enc = encode_source(&p, &source()).unwrap();
        let ctx = SearchContext::new(&p, &enc);
        let cons = [Constraint::new(TokenId(4)), Constraint::new(TokenId(5))];
        let err = grid_beam_search(ctx, Direction::Forward, &cons, SearchConfig { beam_size: 2, max_len: 2 });
        assert!(matches!(err, Err(Error::Unsatisfiable { .. })));
        let h = grid_beam_search(ctx, Direction::Forward, &cons, SearchConfig { beam_size: 2, max_len: 3 }).unwrap();
        assert!(h.finished);
        assert_eq!(h.ids(), vec![TokenId(4), TokenId(5)]);
        assert!(grid_beam_search(ctx, Direction::Forward, &[Constraint::new(EOS)], SearchConfig { beam_size: 2, max_len: 3 }).is_err());
    }

    #[test]
    fn spacing_constraint_costs_nothing() {
        let p = model(2, 9);
        let enc = encode_source(&p, &source()).unwrap();
        let ctx = SearchContext::new(&p, &enc);
        let config = SearchConfig { beam_size: 4, max_len: 9 };
        let spaced = grid_beam_search(ctx, Direction::Forward, &[Constraint::new(PAD)], config).unwrap();
        assert!(spaced.finished);
        let without: Vec<TokenId> = spaced.ids().into_iter().filter(|t| *t != PAD).collect();
        assert_eq!(without.len() + 1, spaced.tokens.len());
        let mut state = start_state(&p, Direction::Forward, &enc);
        let mut score = 0.0;
        for t in without.iter().copied().chain([EOS]) {
            score += crate::math::log_softmax(&state.logits)[t.index()];
            state = decoder_step(&p, Direction::Forward, &enc, &state, t).unwrap();
        }
        assert!((score - spaced.score).abs() < 1e-9);
    }

    #[test]
    fn banned_first_token_is_not_generated_first() {
        let p = model(5, 9);
        let enc = encode_source(&p, &source()).unwrap();
        let ctx = SearchContext::new(&p, &enc);
        let config = SearchConfig { beam_size: 1, max_len: 6 };
        let plain = beam_search(ctx, Direction::Forward, config).unwrap();
        let first = plain.tokens[0].id;
        let start = Arc::new(start_state(&p, Direction::Forward, &enc));
        let h = grid_search_from(ctx, start, &[], Some(first), config).unwrap();
        assert_ne!(h.tokens.first().map(|t| t.id), Some(first));
    }
}
