//! Beam search, lexically constrained grid beam search, and regeneration of
//! a hypothesis around a human revision.

mod regenerate;
mod search;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{DecoderState, TokenId, PAD};

pub use regenerate::{regenerate, Pin, Regeneration, Revision, Strategy};
pub use search::{beam_search, grid_beam_search, grid_search_from, SearchContext};

/// Beam width used unless configured otherwise.
pub const DEFAULT_BEAM: usize = 4;

/// Where a token in a hypothesis came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Model,
    /// Pinned by a revision.
    Constraint,
    /// Chosen mostly through the revision memory.
    Copy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: TokenId,
    /// Surface form for words outside the vocabulary; `None` means the
    /// vocabulary surface of `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
    pub origin: Origin,
}

impl Token {
    pub fn model(id: TokenId) -> Self {
        Self {
            id,
            surface: None,
            origin: Origin::Model,
        }
    }

    pub fn is_spacing(&self) -> bool {
        self.id == PAD
    }

    fn sort_key(&self) -> (TokenId, Option<&str>) {
        (self.id, self.surface.as_deref())
    }
}

/// A word that must appear in the output. [`PAD`] pins an empty slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: TokenId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface: Option<String>,
}

impl Constraint {
    pub fn new(id: TokenId) -> Self {
        Self { id, surface: None }
    }

    pub fn with_surface(id: TokenId, surface: impl Into<String>) -> Self {
        Self {
            id,
            surface: Some(surface.into()),
        }
    }

    pub fn token(&self) -> Token {
        Token {
            id: self.id,
            surface: self.surface.clone(),
            origin: Origin::Constraint,
        }
    }

    fn matches(&self, token: &Token) -> bool {
        token.id == self.id && (self.surface.is_none() || token.surface == self.surface)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub beam_size: usize,
    /// Decoder steps allowed, the terminal symbol included.
    pub max_len: usize,
}

impl SearchConfig {
    /// `2·|source| + 5` steps.
    pub fn for_source(source_len: usize, beam_size: usize) -> Self {
        Self {
            beam_size,
            max_len: max_len_for(source_len),
        }
    }
}

pub fn max_len_for(source_len: usize) -> usize {
    2 * source_len + 5
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Tokens in generation order, terminal symbol excluded.
    pub tokens: Vec<Token>,
    /// Sum of the log-probabilities of the tokens, plus the terminal when
    /// finished. Spacing tokens contribute nothing.
    pub score: f64,
    pub finished: bool,
    /// Index in `tokens` of each constraint, in constraint order.
    pub constraint_positions: Vec<usize>,
    /// `states[k]` is the decoder state that predicted `tokens[k]`; the last
    /// one follows the final token.
    pub states: Vec<Arc<DecoderState>>,
}

impl Hypothesis {
    /// Scored steps: non-spacing tokens plus the terminal when finished.
    pub fn length(&self) -> usize {
        self.tokens.iter().filter(|t| !t.is_spacing()).count() + usize::from(self.finished)
    }

    /// Score per scored step, used for final selection.
    pub fn normalized_score(&self) -> f64 {
        self.score / self.length().max(1) as f64
    }

    pub fn ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.id).collect()
    }
}

/// Checks that `constraints` occur in `tokens` as an ordered subsequence.
pub fn contains_in_order(tokens: &[Token], constraints: &[Constraint]) -> bool {
    let mut it = tokens.iter();
    constraints.iter().all(|c| it.any(|t| c.matches(t)))
}
