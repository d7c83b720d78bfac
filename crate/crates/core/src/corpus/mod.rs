//! Sentence pairs grouped into sessions, vocabulary construction, and the
//! plain-text file formats.

mod synthetic;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Pair, Vocab, RESERVED};

pub use synthetic::{generate, Lexicon, Rule, SyntheticCorpus, SyntheticSpec};

/// Whitespace tokenization; runs of whitespace count as one separator.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

/// A contiguous run of pairs that share a discourse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpan {
    pub start: usize,
    pub len: usize,
}

impl SessionSpan {
    pub fn range(self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub sessions: Vec<SessionSpan>,
    /// Rare words planted in each session, by session index.
    pub rare_words: Vec<Vec<String>>,
}

impl ParallelCorpus {
    /// Checks that sessions partition the pairs in order.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.sessions {
            if s.start != next || s.len == 0 {
                return Err(Error::format("corpus", "sessions must partition the pairs"));
            }
            next += s.len;
        }
        if next != self.pairs.len() {
            return Err(Error::format("corpus", "sessions must cover every pair"));
        }
        if self.rare_words.len() != self.sessions.len() {
            return Err(Error::format("corpus", "one rare-word list per session"));
        }
        Ok(())
    }

    pub fn session(&self, index: usize) -> &[SentencePair] {
        &self.pairs[self.sessions[index].range()]
    }

    pub fn session_pairs(&self) -> impl Iterator<Item = &[SentencePair]> {
        self.sessions.iter().map(|s| &self.pairs[s.range()])
    }

    /// Every planted rare word, across sessions.
    pub fn rare_inventory(&self) -> HashSet<&str> {
        self.rare_words.iter().flatten().map(String::as_str).collect()
    }

    /// Encodes every pair; out-of-vocabulary words become UNK.
    pub fn encode(&self, source: &Vocab, target: &Vocab) -> Vec<Pair> {
        self.pairs
            .iter()
            .map(|p| Pair::new(source.encode(&p.source), target.encode(&p.target)))
            .collect()
    }

    fn paths(dir: &Path, name: &str) -> [PathBuf; 4] {
        ["src", "tgt", "sessions", "rare"].map(|ext| dir.join(format!("{name}.{ext}")))
    }

    /// Writes `name.src`, `name.tgt`, `name.sessions` and `name.rare`.
    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        self.validate()?;
        std::fs::create_dir_all(dir)?;
        let [src, tgt, sessions, rare] = Self::paths(dir, name);
        let mut s = std::io::BufWriter::new(std::fs::File::create(src)?);
        let mut t = std::io::BufWriter::new(std::fs::File::create(tgt)?);
        for p in &self.pairs {
            writeln!(s, "{}", detokenize(&p.source))?;
            writeln!(t, "{}", detokenize(&p.target))?;
        }
        s.flush()?;
        t.flush()?;
        let mut out = String::new();
        for span in &self.sessions {
            out.push_str(&format!("{} {}\n", span.start, span.len));
        }
        std::fs::write(sessions, out)?;
        let mut out = String::new();
        for words in &self.rare_words {
            out.push_str(&detokenize(words));
            out.push('\n');
        }
        std::fs::write(rare, out)?;
        Ok(())
    }

    /// Reads a corpus written by [`save`](Self::save). A missing `.sessions`
    /// file means one session; a missing `.rare` file means no rare words.
    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let [src, tgt, sessions, rare] = Self::paths(dir, name);
        let read_lines = |p: &Path| -> Result<Vec<String>> {
            let f = std::fs::File::open(p)
                .map_err(|e| Error::format("corpus", format!("{}: {e}", p.display())))?;
            Ok(std::io::BufReader::new(f).lines().collect::<std::io::Result<_>>()?)
        };
        let sources = read_lines(&src)?;
        let targets = read_lines(&tgt)?;
        if sources.len() != targets.len() {
            return Err(Error::format(
                "corpus",
                format!("{} source lines but {} target lines", sources.len(), targets.len()),
            ));
        }
        let pairs: Vec<SentencePair> = sources
            .iter()
            .zip(&targets)
            .map(|(s, t)| SentencePair {
                source: tokenize(s),
                target: tokenize(t),
            })
            .collect();
        let spans = if sessions.exists() {
            read_lines(&sessions)?
                .iter()
                .filter(|l| !l.trim().is_empty())
                .map(|l| parse_span(l))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![SessionSpan {
                start: 0,
                len: pairs.len(),
            }]
        };
        let rare_words = if rare.exists() {
            read_lines(&rare)?.iter().map(|l| tokenize(l)).collect()
        } else {
            vec![Vec::new(); spans.len()]
        };
        let corpus = Self {
            pairs,
            sessions: spans,
            rare_words,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

fn parse_span(line: &str) -> Result<SessionSpan> {
    let mut it = line.split_whitespace().map(str::parse::<usize>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(start)), Some(Ok(len)), None) => Ok(SessionSpan { start, len }),
        _ => Err(Error::format("sessions index", format!("bad line {line:?}"))),
    }
}

/// Frequency-ranked vocabulary over `sentences`, truncated to `max_size`
/// entries including the reserved tokens. Ties are broken lexicographically;
/// `exclude` never enters the vocabulary.
pub fn build_vocab<'a, I>(sentences: I, max_size: usize, exclude: &HashSet<&str>) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if max_size <= RESERVED.len() {
        return Err(Error::Config(format!(
            "vocabulary size must exceed {}",
            RESERVED.len()
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in sentences {
        for w in sentence {
            if !exclude.contains(w.as_str()) && !RESERVED.contains(&w.as_str()) {
                *counts.entry(w.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(max_size - RESERVED.len());
    Ok(Vocab::new(ranked.into_iter().map(|(w, _)| w)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UNK;

    fn words(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("a b"), vec!["a", "b"]);
        assert_eq!(tokenize("  a   b \t c "), vec!["a", "b", "c"]);
        assert!(tokenize("").is_empty());
        assert_eq!(detokenize(&tokenize("a   b")), "a b");
    }

    #[test]
    fn vocab_ranks_by_frequency_then_lexicographically() {
        // counts: c 3, a 2, b 2, e 1, d 1
        let corpus = [words("c a b c"), words("b a c d e")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 7, &HashSet::new()).unwrap();
        assert_eq!(&v.tokens()[4..], ["c", "a", "b"]);
        let all = build_vocab(corpus.iter().map(Vec::as_slice), 100, &HashSet::new()).unwrap();
        assert_eq!(&all.tokens()[4..], ["c", "a", "b", "d", "e"]);
        let excluded: HashSet<&str> = ["c"].into();
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 100, &excluded).unwrap();
        assert_eq!(v.id("c"), UNK);
        assert!(build_vocab(corpus.iter().map(Vec::as_slice), 4, &HashSet::new()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let corpus = ParallelCorpus {
            pairs: vec![
                SentencePair {
                    source: words("a b"),
                    target: words("x"),
                },
                SentencePair {
                    source: words("c"),
                    target: words("y z"),
                },
                SentencePair {
                    source: words("d"),
                    target: words("w"),
                },
            ],
            sessions: vec![SessionSpan { start: 0, len: 2 }, SessionSpan { start: 2, len: 1 }],
            rare_words: vec![words("zed"), vec![]],
        };
        let dir = tempfile::tempdir().unwrap();
        corpus.save(dir.path(), "test").unwrap();
        assert_eq!(
            std::fs::read_to_string(dir.path().join("test.sessions")).unwrap(),
            "0 2\n2 1\n"
        );
        assert_eq!(ParallelCorpus::load(dir.path(), "test").unwrap(), corpus);
    }

    #[test]
    fn malformed_sessions_rejected() {
        let mut corpus = ParallelCorpus {
            pairs: vec![SentencePair {
                source: words("a"),
                target: words("b"),
            }],
            sessions: vec![SessionSpan { start: 0, len: 2 }],
            rare_words: vec![vec![]],
        };
        assert!(corpus.validate().is_err());
        corpus.sessions[0].len = 1;
        assert!(corpus.validate().is_ok());
        assert!(parse_span("1 x").is_err());
    }
}
