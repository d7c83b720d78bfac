use imt_core::decoding::{Origin, Token};
use imt_core::simulator::{align, Edit};
use serde::{Deserialize, Serialize};

/// Origin tag shown to clients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayOrigin {
    Model,
    /// Pinned by a human revision.
    Constraint,
    Copy,
    /// Changed by regeneration relative to the previous hypothesis.
    AutoFixed,
}

/// Tags for `current`; model tokens with no match in `previous` become
/// [`DisplayOrigin::AutoFixed`].
pub fn display_origins(previous: Option<&[Token]>, current: &[Token]) -> Vec<DisplayOrigin> {
    let mut out: Vec<DisplayOrigin> = current
        .iter()
        .map(|t| match t.origin {
            Origin::Model => DisplayOrigin::Model,
            Origin::Constraint => DisplayOrigin::Constraint,
            Origin::Copy => DisplayOrigin::Copy,
        })
        .collect();
    if let Some(prev) = previous {
        let key = |t: &Token| (t.id, t.surface.clone());
        let a: Vec<_> = current.iter().map(key).collect();
        let b: Vec<_> = prev.iter().map(key).collect();
        for e in align(&a, &b) {
            let changed = match e {
                Edit::Substitute { hyp, .. } | Edit::Delete { hyp } => Some(hyp),
                _ => None,
            };
            if let Some(i) = changed {
                if out[i] == DisplayOrigin::Model {
                    out[i] = DisplayOrigin::AutoFixed;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use imt_core::decoding::Constraint;
    use imt_core::model::TokenId;

    fn t(i: u32) -> Token {
        Token::model(TokenId(i))
    }

    #[test]
    fn snapshot_diff() {
        // previous: 4 5 6 7; revised 5 -> 9, regeneration changed 7 -> 8
        let prev = vec![t(4), t(5), t(6), t(7)];
        let cur = vec![t(4), Constraint::new(TokenId(9)).token(), t(6), t(8), t(10)];
        assert_eq!(
            display_origins(Some(&prev), &cur),
            vec![
                DisplayOrigin::Model,
                DisplayOrigin::Constraint,
                DisplayOrigin::Model,
                DisplayOrigin::AutoFixed,
                DisplayOrigin::AutoFixed,
            ]
        );
        assert_eq!(display_origins(None, &cur)[3], DisplayOrigin::Model);
    }
}
