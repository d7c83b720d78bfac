use serde::{Deserialize, Serialize};

/// One step of an edit script turning a hypothesis into a reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    Match { hyp: usize, reference: usize },
    Substitute { hyp: usize, reference: usize },
    /// Hypothesis word with no counterpart.
    Delete { hyp: usize },
    /// Reference word missing before hypothesis index `before`.
    Insert { before: usize, reference: usize },
}

impl Edit {
    pub fn is_match(&self) -> bool {
        matches!(self, Edit::Match { .. })
    }
}

/// Minimum-edit-distance alignment. Among optimal scripts, the backtrace
/// prefers match, then substitution, deletion and insertion.
pub fn align<T: PartialEq>(hyp: &[T], reference: &[T]) -> Vec<Edit> {
    let (n, m) = (hyp.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[i - 1][j - 1] + usize::from(hyp[i - 1] != reference[j - 1]);
            d[i][j] = diag.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut script = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && hyp[i - 1] == reference[j - 1] && d[i][j] == d[i - 1][j - 1] {
            script.push(Edit::Match { hyp: i - 1, reference: j - 1 });
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            script.push(Edit::Substitute { hyp: i - 1, reference: j - 1 });
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            script.push(Edit::Delete { hyp: i - 1 });
            i -= 1;
        } else {
            script.push(Edit::Insert { before: i, reference: j - 1 });
            j -= 1;
        }
    }
    script.reverse();
    script
}

/// Number of non-match edits.
pub fn edit_distance(script: &[Edit]) -> usize {
    script.iter().filter(|e| !e.is_match()).count()
}
