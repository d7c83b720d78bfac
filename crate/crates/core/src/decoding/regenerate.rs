use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::search::{grid_search_from, SearchContext};
use super::{max_len_for, Constraint, SearchConfig, Token};
use crate::error::{Error, Result};
use crate::model::{decoder_step, prime, start_state, DecoderState, Direction, TokenId, PAD};

/// How a hypothesis is rebuilt after a revision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Keep the prefix, beam-search the suffix.
    #[serde(rename = "unidir")]
    UniDir,
    /// Keep the prefix, grid-search the suffix with the pinned words to the
    /// right of the revision.
    #[serde(rename = "unidir_g")]
    UniDirGrid,
    /// Rebuild the right part with the forward decoder, then the left part
    /// with the backward decoder.
    #[serde(rename = "bidir")]
    BiDir,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::UniDir, Strategy::UniDirGrid, Strategy::BiDir];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::UniDir => "unidir",
            Strategy::UniDirGrid => "unidir_g",
            Strategy::BiDir => "bidir",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected unidir, unidir_g or bidir)")))
    }
}

/// One human edit of the current hypothesis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Revision {
    /// Replace the token at `position`.
    Replace { position: usize, token: Constraint },
    /// Insert before the token at `slot` (`slot == len` appends).
    Insert { slot: usize, token: Constraint },
    /// Remove the token at `position`, pinning an empty slot there.
    Delete { position: usize },
}

impl Revision {
    pub fn position(&self) -> usize {
        match self {
            Revision::Replace { position, .. } | Revision::Delete { position } => *position,
            Revision::Insert { slot, .. } => *slot,
        }
    }

    fn pivot(&self) -> Constraint {
        match self {
            Revision::Replace { token, .. } | Revision::Insert { token, .. } => token.clone(),
            Revision::Delete { .. } => Constraint::new(PAD),
        }
    }
}

/// A pinned word and its index in the current hypothesis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pin {
    pub position: usize,
    pub token: Constraint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Regeneration {
    pub tokens: Vec<Token>,
    /// Every surviving pin, the new revision included, at its index in
    /// `tokens`, left to right.
    pub pins: Vec<Pin>,
    /// Forward state and context at the revised position, the memory key for
    /// the revised word.
    pub revision_state: Arc<DecoderState>,
    /// Older pins displaced by this revision.
    pub dropped: Vec<Pin>,
    /// Both searches ended on a terminal symbol.
    pub finished: bool,
}

struct Split {
    left: Vec<Token>,
    left_pins: Vec<Pin>,
    right_pins: Vec<Constraint>,
    pivot: Constraint,
    banned: Option<TokenId>,
    dropped: Vec<Pin>,
}

fn split(current: &[Token], pins: &[Pin], revision: &Revision) -> Result<Split> {
    let p = revision.position();
    let len = current.len();
    let in_range = match revision {
        Revision::Insert { .. } => p <= len,
        _ => p < len,
    };
    if !in_range {
        return Err(Error::PositionOutOfRange { position: p, len });
    }
    let mut sorted: Vec<&Pin> = pins.iter().collect();
    sorted.sort_by_key(|pin| pin.position);
    let mut left_pins = Vec::new();
    let mut right_pins = Vec::new();
    let mut dropped = Vec::new();
    for pin in sorted {
        if pin.position >= len {
            return Err(Error::PositionOutOfRange {
                position: pin.position,
                len,
            });
        }
        let goes_right = match revision {
            Revision::Insert { .. } => pin.position >= p,
            _ if pin.position == p => {
                dropped.push(pin.clone());
                continue;
            }
            _ => pin.position > p,
        };
        if goes_right {
            right_pins.push(pin.token.clone());
        } else {
            left_pins.push(pin.clone());
        }
    }
    let banned = match revision {
        Revision::Delete { position } => Some(current[*position].id),
        _ => None,
    };
    Ok(Split {
        left: current[..p].to_vec(),
        left_pins,
        right_pins,
        pivot: revision.pivot(),
        banned,
        dropped,
    })
}

fn inputs(tokens: &[Token]) -> Vec<TokenId> {
    tokens.iter().map(|t| t.id).collect()
}

/// Stage shared by every strategy: prime the forward decoder on the kept
/// prefix, place the revised word and search the right part.
fn forward_stage(
    ctx: SearchContext,
    split: &Split,
    constraints: &[Constraint],
    config: SearchConfig,
) -> Result<(Arc<DecoderState>, super::Hypothesis)> {
    let params = ctx.params;
    let states = prime(params, Direction::Forward, ctx.encoded, &inputs(&split.left))?;
    let at_revision = states.last().unwrap().clone();
    let after = decoder_step(params, Direction::Forward, ctx.encoded, &at_revision, split.pivot.id)?;
    let budget = config
        .max_len
        .saturating_sub(split.left.len() + 1)
        .max(constraints.len() + 1);
    let right = grid_search_from(
        ctx,
        Arc::new(after),
        constraints,
        split.banned,
        SearchConfig {
            beam_size: config.beam_size,
            max_len: budget,
        },
    )?;
    Ok((at_revision, right))
}

/// Applies `revision` to `current` and regenerates it with `strategy`.
///
/// `pins` are the earlier revisions of this round. Deletions leave no pin
/// and no token behind.
pub fn regenerate(
    strategy: Strategy,
    ctx: SearchContext,
    current: &[Token],
    pins: &[Pin],
    revision: &Revision,
    beam_size: usize,
) -> Result<Regeneration> {
    let split = split(current, pins, revision)?;
    let config = SearchConfig {
        beam_size,
        max_len: max_len_for(ctx.encoded.source.len()),
    };
    let right_constraints: &[Constraint] = match strategy {
        Strategy::UniDir => &[],
        _ => &split.right_pins,
    };
    let (at_revision, right) = forward_stage(ctx, &split, right_constraints, config)?;
    let pivot_token = (split.pivot.id != PAD).then(|| split.pivot.token());

    let (left, left_pins, left_finished) = match strategy {
        Strategy::UniDir | Strategy::UniDirGrid => (split.left.clone(), split.left_pins.clone(), true),
        Strategy::BiDir => backward_stage(ctx, &split, &right.tokens, config)?,
    };

    let mut tokens = left;
    let mut out_pins = left_pins;
    let offset = tokens.len();
    if let Some(t) = pivot_token {
        out_pins.push(Pin {
            position: offset,
            token: split.pivot.clone(),
        });
        tokens.push(t);
    }
    let base = tokens.len();
    if strategy != Strategy::UniDir {
        for (k, pos) in right.constraint_positions.iter().enumerate() {
            out_pins.push(Pin {
                position: base + pos,
                token: split.right_pins[k].clone(),
            });
        }
    }
    tokens.extend(right.tokens.iter().cloned());
    let (tokens, out_pins) = drop_spacing(tokens, out_pins);
    Ok(Regeneration {
        tokens,
        pins: out_pins,
        revision_state: at_revision,
        dropped: split.dropped,
        finished: right.finished && left_finished,
    })
}

/// Runs the backward decoder over the new right part and the revised word,
/// then searches leftwards for a new left part holding the left pins.
fn backward_stage(
    ctx: SearchContext,
    split: &Split,
    right: &[Token],
    config: SearchConfig,
) -> Result<(Vec<Token>, Vec<Pin>, bool)> {
    let params = ctx.params;
    let mut feed: Vec<TokenId> = right.iter().rev().map(|t| t.id).collect();
    feed.push(split.pivot.id);
    let mut state = start_state(params, Direction::Backward, ctx.encoded);
    for t in feed {
        state = decoder_step(params, Direction::Backward, ctx.encoded, &state, t)?;
    }
    let constraints: Vec<Constraint> = split.left_pins.iter().rev().map(|p| p.token.clone()).collect();
    let budget = config
        .max_len
        .saturating_sub(right.len() + 1)
        .max(constraints.len() + 1);
    // stage two reads no memory
    let backward_ctx = SearchContext {
        memory: None,
        ..ctx
    };
    let hyp = grid_search_from(
        backward_ctx,
        Arc::new(state),
        &constraints,
        split.banned,
        SearchConfig {
            beam_size: config.beam_size,
            max_len: budget,
        },
    )?;
    let n = hyp.tokens.len();
    let left: Vec<Token> = hyp.tokens.into_iter().rev().collect();
    let mut pins: Vec<Pin> = hyp
        .constraint_positions
        .iter()
        .zip(&constraints)
        .map(|(pos, token)| Pin {
            position: n - 1 - pos,
            token: token.clone(),
        })
        .collect();
    pins.reverse();
    Ok((left, pins, hyp.finished))
}

/// Removes spacing tokens and shifts pin positions to match.
fn drop_spacing(tokens: Vec<Token>, pins: Vec<Pin>) -> (Vec<Token>, Vec<Pin>) {
    let mut shift = Vec::with_capacity(tokens.len());
    let mut removed = 0;
    for t in &tokens {
        shift.push(removed);
        if t.is_spacing() {
            removed += 1;
        }
    }
    let pins = pins
        .into_iter()
        .filter(|p| !tokens[p.position].is_spacing())
        .map(|p| Pin {
            position: p.position - shift[p.position],
            token: p.token,
        })
        .collect();
    (tokens.into_iter().filter(|t| !t.is_spacing()).collect(), pins)
}
