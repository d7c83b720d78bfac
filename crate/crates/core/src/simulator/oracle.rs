use serde::{Deserialize, Serialize};

use super::align::{align, Edit};
use super::bleu::sentence_bleu_smoothed;
use crate::decoding::{Strategy, Token};
use crate::error::{Error, Result};
use crate::session::Session;

/// A revision taken from the reference, with the hypothesis it leads to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCandidate {
    pub position: usize,
    pub insert: bool,
    pub surface: String,
    pub tokens: Vec<Token>,
    pub words: Vec<String>,
    /// Smoothed sentence BLEU after regeneration.
    pub bleu: f64,
}

/// Revisions suggested by aligning `hyp` to each reference, sorted and
/// deduplicated. Left-to-right decoding only gets the first error of each
/// alignment.
pub fn candidate_revisions(hyp: &[String], refs: &[Vec<String>], strategy: Strategy) -> Vec<(usize, bool, String)> {
    let mut out = Vec::new();
    for reference in refs {
        let edits = align(hyp, reference);
        let mut found = edits.iter().filter_map(|e| match *e {
            Edit::Substitute { hyp, reference: r } => Some((hyp, false, reference[r].clone())),
            Edit::Insert { before, reference: r } => Some((before, true, reference[r].clone())),
            _ => None,
        });
        if strategy == Strategy::UniDir {
            let first_error = edits.iter().find(|e| !e.is_match());
            if matches!(first_error, Some(Edit::Substitute { .. } | Edit::Insert { .. })) {
                out.extend(found.next());
            }
        } else {
            out.extend(found);
        }
    }
    out.sort();
    out.dedup();
    out
}

/// The revision of `round` that raises smoothed sentence BLEU the most
/// after regeneration, or `None` when nothing improves it.
pub fn critical_revision_oracle(session: &Session, round: u64, refs: &[Vec<String>]) -> Result<Option<OracleCandidate>> {
    Ok(evaluate_candidates(session, round, refs)?
        .into_iter()
        .fold(None, |best: Option<OracleCandidate>, c| match best {
            Some(b) if b.bleu >= c.bleu => Some(b),
            _ => Some(c),
        }))
}

/// Every strictly improving candidate, in candidate order.
pub fn evaluate_candidates(session: &Session, round: u64, refs: &[Vec<String>]) -> Result<Vec<OracleCandidate>> {
    if refs.is_empty() {
        return Err(Error::Empty("reference set"));
    }
    let r = session.round(round)?;
    let hyp = session.render_tokens(&r.current);
    if refs.iter().any(|x| *x == hyp) {
        return Ok(Vec::new());
    }
    let current = sentence_bleu_smoothed(&hyp, refs);
    let mut out = Vec::new();
    for (position, insert, surface) in candidate_revisions(&hyp, refs, session.config().strategy) {
        let regen = match session.preview(round, position, &surface, insert) {
            Ok(g) => g,
            Err(Error::Unsatisfiable { .. }) => continue,
            Err(e) => return Err(e),
        };
        let words = session.render_tokens(&regen.tokens);
        let bleu = sentence_bleu_smoothed(&words, refs);
        if bleu > current {
            out.push(OracleCandidate {
                position,
                insert,
                surface,
                tokens: regen.tokens,
                words,
                bleu,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn candidates_come_from_the_alignment() {
        let c = candidate_revisions(&w("a x c"), &[w("a b c")], Strategy::BiDir);
        assert_eq!(c, vec![(1, false, "b".to_string())]);
        let c = candidate_revisions(&w("a c"), &[w("a b c")], Strategy::BiDir);
        assert_eq!(c, vec![(1, true, "b".to_string())]);
        let c = candidate_revisions(&w("x b y"), &[w("a b c")], Strategy::BiDir);
        assert_eq!(c.len(), 2);
        let c = candidate_revisions(&w("x b y"), &[w("a b c")], Strategy::UniDir);
        assert_eq!(c, vec![(0, false, "a".to_string())]);
        // a surplus word first leaves nothing to substitute
        assert!(candidate_revisions(&w("z a b c"), &[w("a b c")], Strategy::UniDir).is_empty());
    }
}
