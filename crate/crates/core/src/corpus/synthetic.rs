//! A toy language pair with a hidden per-sentence register, local reordering,
//! noise words and per-session rare names.

use std::collections::HashSet;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ParallelCorpus, SentencePair, SessionSpan};
use crate::error::{Error, Result};

/// How a source sentence is turned into its target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Word-by-word translation.
    Dictionary,
    /// Word-by-word, then every adjacent (class A, class B) source pair is
    /// emitted swapped, scanning left to right without overlap.
    #[default]
    DictionaryReorder,
    /// Word-by-word in reverse order.
    ReverseDictionary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Regular source words (names and noise words come on top).
    pub source_words: usize,
    /// Source words whose translation depends on the register.
    pub ambiguous_words: usize,
    /// Number of hidden registers.
    pub registers: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_sessions: usize,
    pub test_sessions: usize,
    /// Draws the test split from its own stream, so that several held-out
    /// sets can share one lexicon and training split.
    pub test_seed: Option<u64>,
    pub sentences_per_session: usize,
    /// Rare names planted per session.
    pub rare_words: usize,
    /// Sentences of its session each rare name appears in.
    pub rare_repetition: usize,
    pub rule: Rule,
    /// Probability of inserting a noise word after each target token.
    pub noise_rate: f64,
    pub noise_words: usize,
    /// Probability that a sentence uses its session's register.
    pub register_coherence: f64,
    /// Exponent of the Zipf distribution over source words.
    pub zipf: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            source_words: 60,
            ambiguous_words: 30,
            registers: 3,
            min_len: 5,
            max_len: 10,
            train_sessions: 300,
            test_sessions: 12,
            test_seed: None,
            sentences_per_session: 10,
            rare_words: 2,
            rare_repetition: 3,
            rule: Rule::DictionaryReorder,
            noise_rate: 0.05,
            noise_words: 3,
            register_coherence: 0.8,
            zipf: 0.8,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.source_words == 0 || self.sentences_per_session == 0 {
            return fail("source_words and sentences_per_session must be positive");
        }
        if self.train_sessions + self.test_sessions == 0 {
            return fail("at least one session is required");
        }
        if self.ambiguous_words > self.source_words {
            return fail("ambiguous_words exceeds source_words");
        }
        if self.ambiguous_words > 0 && self.registers < 2 {
            return fail("ambiguous words need at least two registers");
        }
        if self.registers == 0 {
            return fail("registers must be positive");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail("need 1 <= min_len <= max_len");
        }
        if self.rare_words > 0 {
            if self.rare_repetition < 2 {
                return fail("rare_repetition must be at least 2");
            }
            if self.rare_repetition > self.sentences_per_session {
                return fail("rare_repetition exceeds sentences_per_session");
            }
        }
        for (name, p) in [
            ("noise_rate", self.noise_rate),
            ("register_coherence", self.register_coherence),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.noise_rate > 0.0 && self.noise_words == 0 {
            return fail("noise_rate > 0 needs noise words");
        }
        if !(self.zipf.is_finite() && self.zipf >= 0.0) {
            return fail("zipf must be finite and >= 0");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    source: String,
    class: Class,
    /// One form, one per register, or two forms split by register parity.
    forms: Vec<String>,
}

/// The word-level translation table shared by the train and test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    entries: Vec<Entry>,
    noise: Vec<String>,
    rule: Rule,
    registers: usize,
}

const SOURCE_ONSETS: &[&str] = &["k", "m", "t", "p", "s", "n", "l", "r", "b", "v"];
const TARGET_ONSETS: &[&str] = &["d", "g", "f", "h", "j", "w", "z", "x", "c", "q"];
const NAME_ONSETS: &[&str] = &["br", "tr", "st", "kl", "dr", "gr", "pl", "sk"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng, onsets: &[&str], syllables: usize, used: &mut HashSet<String>) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(onsets.choose(rng).unwrap());
            w.push_str(VOWELS.choose(rng).unwrap());
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

impl Lexicon {
    fn build(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> Self {
        let mut entries = Vec::with_capacity(spec.source_words);
        for i in 0..spec.source_words {
            let source = pseudo_word(rng, SOURCE_ONSETS, 2, used);
            let class = if rng.gen_bool(0.4) { Class::A } else { Class::B };
            let n_forms = if i < spec.ambiguous_words {
                // alternate between register-specific and parity-only words
                if i % 2 == 0 {
                    spec.registers
                } else {
                    2
                }
            } else {
                1
            };
            let forms = (0..n_forms)
                .map(|_| pseudo_word(rng, TARGET_ONSETS, 2, used))
                .collect();
            entries.push(Entry { source, class, forms });
        }
        entries.shuffle(rng);
        let noise = (0..spec.noise_words)
            .map(|_| pseudo_word(rng, TARGET_ONSETS, 1, used))
            .collect();
        Self {
            entries,
            noise,
            rule: spec.rule,
            registers: spec.registers,
        }
    }

    /// Builds the lexicon a spec would generate, without sampling sentences.
    pub fn from_spec(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok(Self::build(spec, &mut rng, &mut HashSet::new()))
    }

    /// Source words in table order.
    pub fn source_words(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.source.as_str())
    }

    pub fn noise_words(&self) -> &[String] {
        &self.noise
    }

    pub fn is_ambiguous(&self, source: &str) -> bool {
        self.entry(source).is_some_and(|e| e.forms.len() > 1)
    }

    fn entry(&self, source: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.source == source)
    }

    /// Target form of one word; unknown words (names) translate to
    /// themselves.
    pub fn word(&self, source: &str, register: usize) -> String {
        match self.entry(source) {
            Some(e) => e.forms[register % e.forms.len()].clone(),
            None => source.to_string(),
        }
    }

    /// Applies the rule without noise.
    pub fn translate<S: AsRef<str>>(&self, source: &[S], register: usize) -> Vec<String> {
        let register = register % self.registers.max(1);
        let words: Vec<String> = source.iter().map(|w| self.word(w.as_ref(), register)).collect();
        match self.rule {
            Rule::Dictionary => words,
            Rule::ReverseDictionary => words.into_iter().rev().collect(),
            Rule::DictionaryReorder => {
                let class = |w: &str| self.entry(w).map(|e| e.class);
                let mut out = Vec::with_capacity(words.len());
                let mut i = 0;
                while i < words.len() {
                    let swap = i + 1 < words.len()
                        && class(source[i].as_ref()) == Some(Class::A)
                        && class(source[i + 1].as_ref()) == Some(Class::B);
                    if swap {
                        out.push(words[i + 1].clone());
                        out.push(words[i].clone());
                        i += 2;
                    } else {
                        out.push(words[i].clone());
                        i += 1;
                    }
                }
                out
            }
        }
    }
}

/// Train and test splits drawn over one lexicon.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub lexicon: Lexicon,
    pub train: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// Samples a corpus; a pure function of the spec.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut used = HashSet::new();
    let lexicon = Lexicon::build(spec, &mut rng, &mut used);
    let weights: Vec<f64> = (1..=lexicon.entries.len())
        .map(|r| (r as f64).powf(-spec.zipf))
        .collect();
    let zipf = WeightedIndex::new(&weights).expect("positive weights");

    let split = |sessions: usize, rng: &mut ChaCha8Rng, used: &mut HashSet<String>| {
        let mut corpus = ParallelCorpus::default();
        for _ in 0..sessions {
            let start = corpus.pairs.len();
            let session_register = rng.gen_range(0..spec.registers);
            let mut sources: Vec<Vec<String>> = (0..spec.sentences_per_session)
                .map(|_| {
                    let len = rng.gen_range(spec.min_len..=spec.max_len);
                    (0..len)
                        .map(|_| lexicon.entries[zipf.sample(rng)].source.clone())
                        .collect()
                })
                .collect();
            let names: Vec<String> = (0..spec.rare_words)
                .map(|_| pseudo_word(rng, NAME_ONSETS, 3, used))
                .collect();
            for name in &names {
                let picks = rand::seq::index::sample(rng, sources.len(), spec.rare_repetition);
                for k in picks.iter() {
                    let at = rng.gen_range(0..=sources[k].len());
                    sources[k].insert(at, name.clone());
                }
            }
            for source in sources {
                let register = if rng.gen_bool(spec.register_coherence) {
                    session_register
                } else {
                    rng.gen_range(0..spec.registers)
                };
                let clean = lexicon.translate(&source, register);
                let mut target = Vec::with_capacity(clean.len() + 2);
                for w in clean {
                    target.push(w);
                    if spec.noise_rate > 0.0 && rng.gen_bool(spec.noise_rate) {
                        target.push(lexicon.noise.choose(rng).unwrap().clone());
                    }
                }
                corpus.pairs.push(SentencePair { source, target });
            }
            corpus.sessions.push(SessionSpan {
                start,
                len: spec.sentences_per_session,
            });
            corpus.rare_words.push(names);
        }
        corpus
    };
    let train = split(spec.train_sessions, &mut rng, &mut used);
    let test = match spec.test_seed {
        Some(seed) => split(spec.test_sessions, &mut ChaCha8Rng::seed_from_u64(seed), &mut used),
        None => split(spec.test_sessions, &mut rng, &mut used),
    };
    Ok(SyntheticCorpus {
        lexicon,
        train,
        test,
    })
}
