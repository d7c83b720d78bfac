use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a [`Vocab`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Padding doubles as the "spacing" token a deletion pins in place: the
/// decoders consume it as a no-op and never generate it.
pub const PAD: TokenId = TokenId(0);
pub const BOS: TokenId = TokenId(1);
pub const EOS: TokenId = TokenId(2);
pub const UNK: TokenId = TokenId(3);

pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from non-reserved tokens; duplicates and reserved
    /// surface forms are skipped.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            vocab.push(t.to_string());
        }
        for t in tokens {
            vocab.push(t.into());
        }
        vocab
    }

    fn push(&mut self, token: String) {
        if self.index.contains_key(&token) {
            return;
        }
        self.index
            .insert(token.clone(), TokenId(self.tokens.len() as u32));
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a surface form; unknown forms map to [`UNK`].
    pub fn id(&self, surface: &str) -> TokenId {
        self.index.get(surface).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.index.contains_key(surface)
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        if id.index() < self.tokens.len() {
            Ok(())
        } else {
            Err(Error::InvalidToken {
                id: id.0,
                size: self.tokens.len(),
            })
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; line number is the id.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let lines = input.lines().collect::<std::io::Result<Vec<_>>>()?;
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::format("vocabulary", "reserved tokens missing"));
        }
        let vocab = Self::new(lines[RESERVED.len()..].iter().cloned());
        if vocab.len() != lines.len() {
            return Err(Error::format("vocabulary", "duplicate token"));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_first_and_unknown_maps_to_unk() {
        let v = Vocab::new(["a", "b", "a"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("</s>"), EOS);
        assert_eq!(v.id("a"), TokenId(4));
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.surface(TokenId(5)), Some("b"));
        assert!(v.check(TokenId(6)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::new(["x", "y", "z"]);
        let mut bytes = Vec::new();
        v.write(&mut bytes).unwrap();
        assert_eq!(
            String::from_utf8(bytes.clone()).unwrap(),
            "<pad>\n<s>\n</s>\n<unk>\nx\ny\nz\n"
        );
        assert_eq!(Vocab::read(bytes.as_slice()).unwrap(), v);
        assert!(Vocab::read(&b"x\ny\n"[..]).is_err());
    }
}
