//! Rounds of revisions over a sequence of related sentences, with a
//! session-scoped revision memory and per-session online adaptation.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::tokenize;
use crate::decoding::{beam_search, regenerate, Constraint, Pin, Regeneration, Revision, SearchConfig, SearchContext, Strategy, Token, DEFAULT_BEAM};
use crate::error::{Error, Result};
use crate::memory::{MemoryConfig, RevisionMemory};
use crate::model::{apply, encode_source, joint_loss, Direction, ModelParameters, TokenId, TranslationModel, PAD, UNK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub beam_size: usize,
    pub strategy: Strategy,
    pub memory: MemoryConfig,
    pub use_memory: bool,
    pub online_learning: bool,
    pub online_learning_rate: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            beam_size: DEFAULT_BEAM,
            strategy: Strategy::BiDir,
            memory: MemoryConfig::default(),
            use_memory: true,
            online_learning: true,
            online_learning_rate: 1e-5,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.memory.capacity == 0 {
            return Err(Error::Config("memory capacity must be at least 1".into()));
        }
        if !(self.online_learning_rate.is_finite() && self.online_learning_rate >= 0.0) {
            return Err(Error::Config("online learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

/// One revision as it was applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionRecord {
    pub position: usize,
    /// True when the word was inserted before `position`.
    pub insert: bool,
    pub old_surface: Option<String>,
    /// Empty for a deletion.
    pub new_surface: String,
    /// Decoder state and context at the revised position.
    pub context: Option<(Vec<f64>, Vec<f64>)>,
}

impl RevisionRecord {
    pub fn is_deletion(&self) -> bool {
        self.new_surface.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub id: u64,
    pub source: Vec<String>,
    pub initial: Vec<Token>,
    pub current: Vec<Token>,
    pub pins: Vec<Pin>,
    pub revisions: Vec<RevisionRecord>,
    /// Hypothesis after each revision.
    pub snapshots: Vec<Vec<Token>>,
    pub closed: bool,
}

impl Round {
    /// Hypothesis before the latest revision.
    pub fn previous(&self) -> &[Token] {
        match self.snapshots.len() {
            0 | 1 => &self.initial,
            n => &self.snapshots[n - 2],
        }
    }
}

/// Result of closing a round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    /// Joint loss of the accepted pair before and after the update; `None`
    /// when no update was made.
    pub loss_before: Option<f64>,
    pub loss_after: Option<f64>,
}

/// Line of a session transcript.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Open { session: String, config: SessionConfig },
    Translate { round: u64, source: String, tokens: Vec<Token> },
    Revise {
        round: u64,
        position: usize,
        new_surface: String,
        #[serde(default)]
        insert: bool,
        tokens: Vec<Token>,
    },
    Accept { round: u64, tokens: Vec<Token> },
}

pub struct Session {
    id: String,
    config: SessionConfig,
    base: Arc<TranslationModel>,
    /// `None` until the first online update.
    adapted: Option<ModelParameters>,
    memory: RevisionMemory,
    rounds: Vec<Round>,
    revisions: u64,
    transcript: Vec<TranscriptRecord>,
    sink: Option<File>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("rounds", &self.rounds.len())
            .field("revisions", &self.revisions)
            .finish()
    }
}

impl Session {
    /// Opens a session with a fresh random id.
    pub fn open(base: Arc<TranslationModel>, config: SessionConfig) -> Result<Self> {
        Self::open_with_id(uuid::Uuid::new_v4().to_string(), base, config)
    }

    pub fn open_with_id(id: impl Into<String>, base: Arc<TranslationModel>, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let id = id.into();
        let mut session = Self {
            memory: RevisionMemory::new(config.memory),
            transcript: Vec::new(),
            id: id.clone(),
            config: config.clone(),
            base,
            adapted: None,
            rounds: Vec::new(),
            revisions: 0,
            sink: None,
        };
        session.record(TranscriptRecord::Open { session: id, config })?;
        Ok(session)
    }

    /// Starts from already adapted parameters instead of the base ones.
    pub fn with_parameters(mut self, params: ModelParameters) -> Result<Self> {
        if params.config != self.base.params.config {
            return Err(Error::Config("parameters do not match the base model".into()));
        }
        self.adapted = Some(params);
        Ok(self)
    }

    /// Appends every transcript record, past and future, to `path`.
    pub fn with_transcript(mut self, path: &Path) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).truncate(true).write(true).open(path)?;
        for r in &self.transcript {
            writeln!(file, "{}", serde_json::to_string(r)?)?;
        }
        file.flush()?;
        self.sink = Some(file);
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn base(&self) -> &Arc<TranslationModel> {
        &self.base
    }

    /// Parameters used for decoding in this session.
    pub fn params(&self) -> &ModelParameters {
        self.adapted.as_ref().unwrap_or(&self.base.params)
    }

    pub fn into_params(self) -> ModelParameters {
        match self.adapted {
            Some(p) => p,
            None => self.base.params.clone(),
        }
    }

    pub fn memory(&self) -> &RevisionMemory {
        &self.memory
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn round(&self, id: u64) -> Result<&Round> {
        self.rounds
            .iter()
            .find(|r| r.id == id)
            .ok_or(Error::UnknownRound(id))
    }

    /// Revisions made in this session so far.
    pub fn revision_count(&self) -> u64 {
        self.revisions
    }

    pub fn transcript(&self) -> &[TranscriptRecord] {
        &self.transcript
    }

    fn record(&mut self, r: TranscriptRecord) -> Result<()> {
        if let Some(f) = self.sink.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&r)?)?;
            f.flush()?;
        }
        self.transcript.push(r);
        Ok(())
    }

    fn active_memory(&self) -> Option<&RevisionMemory> {
        self.config.use_memory.then_some(&self.memory)
    }

    /// Surface form of a token.
    pub fn surface<'a>(&'a self, token: &'a Token) -> &'a str {
        token
            .surface
            .as_deref()
            .or_else(|| self.base.target_vocab.surface(token.id))
            .unwrap_or("<unk>")
    }

    /// Target words of a hypothesis, spacing dropped.
    pub fn render_tokens(&self, tokens: &[Token]) -> Vec<String> {
        render_tokens(&self.base, tokens)
    }

    pub fn render(&self, tokens: &[Token]) -> String {
        self.render_tokens(tokens).join(" ")
    }

    fn constraint_for(&self, surface: &str) -> Constraint {
        if self.base.target_vocab.contains(surface) {
            Constraint::new(self.base.target_vocab.id(surface))
        } else {
            Constraint::with_surface(UNK, surface)
        }
    }

    /// Opens a round with the model's translation of `source`.
    pub fn translate(&mut self, source: &str) -> Result<&Round> {
        let words = tokenize(source);
        if words.is_empty() {
            return Err(Error::Empty("source sentence"));
        }
        let ids = self.base.source_vocab.encode(&words);
        let params = self.params();
        let encoded = encode_source(params, &ids)?;
        let ctx = SearchContext::new(params, &encoded).with_memory(self.active_memory());
        let hyp = beam_search(ctx, Direction::Forward, SearchConfig::for_source(ids.len(), self.config.beam_size))?;
        let id = self.rounds.last().map_or(0, |r| r.id + 1);
        self.record(TranscriptRecord::Translate {
            round: id,
            source: words.join(" "),
            tokens: hyp.tokens.clone(),
        })?;
        self.rounds.push(Round {
            id,
            source: words,
            initial: hyp.tokens.clone(),
            current: hyp.tokens,
            pins: Vec::new(),
            revisions: Vec::new(),
            snapshots: Vec::new(),
            closed: false,
        });
        Ok(self.rounds.last().unwrap())
    }

    fn open_round_index(&self, round: u64) -> Result<usize> {
        let k = self
            .rounds
            .iter()
            .position(|r| r.id == round)
            .ok_or(Error::UnknownRound(round))?;
        if self.rounds[k].closed {
            return Err(Error::RoundClosed(round));
        }
        Ok(k)
    }

    /// The hypothesis a revision would produce, without applying it.
    pub fn preview(&self, round: u64, position: usize, new_surface: &str, insert: bool) -> Result<Regeneration> {
        let k = self.open_round_index(round)?;
        Ok(self.regenerate_at(k, position, new_surface.trim(), insert)?.1)
    }

    fn regenerate_at(&self, k: usize, position: usize, new_surface: &str, insert: bool) -> Result<(Revision, Regeneration)> {
        if new_surface.split_whitespace().count() > 1 {
            return Err(Error::Contract("a revision is a single word".into()));
        }
        let round = &self.rounds[k];
        let revision = match (new_surface.is_empty(), insert) {
            (true, true) => return Err(Error::Contract("an insertion needs a word".into())),
            (true, false) => Revision::Delete { position },
            (false, false) => Revision::Replace {
                position,
                token: self.constraint_for(new_surface),
            },
            (false, true) => Revision::Insert {
                slot: position,
                token: self.constraint_for(new_surface),
            },
        };
        let ids = self.base.source_vocab.encode(&round.source);
        let params = self.params();
        let encoded = encode_source(params, &ids)?;
        let ctx = SearchContext::new(params, &encoded).with_memory(self.active_memory());
        let regen = regenerate(
            self.config.strategy,
            ctx,
            &round.current,
            &round.pins,
            &revision,
            self.config.beam_size,
        )?;
        Ok((revision, regen))
    }

    /// Replaces (or, with `insert`, inserts before) the word at `position`
    /// and regenerates the hypothesis around it. An empty `new_surface`
    /// deletes the word.
    pub fn revise(&mut self, round: u64, position: usize, new_surface: &str, insert: bool) -> Result<&Round> {
        let k = self.open_round_index(round)?;
        let new_surface = new_surface.trim();
        let (revision, regen) = self.regenerate_at(k, position, new_surface, insert)?;
        let current = &self.rounds[k].current;
        let old_surface = (!insert).then(|| self.surface(&current[position]).to_string());
        let key = (regen.revision_state.state.clone(), regen.revision_state.context.clone());
        for pin in &regen.dropped {
            log::warn!("revision at {position} replaces the earlier pin on {:?}", pin.token);
        }

        self.revisions += 1;
        if self.config.use_memory {
            match &revision {
                Revision::Delete { .. } => self.memory.note_revision(),
                Revision::Replace { token, .. } | Revision::Insert { token, .. } => {
                    self.memory.write(key.0.clone(), key.1.clone(), token.id, new_surface)?
                }
            }
        }
        self.record(TranscriptRecord::Revise {
            round,
            position,
            new_surface: new_surface.to_string(),
            insert,
            tokens: regen.tokens.clone(),
        })?;
        let r = &mut self.rounds[k];
        r.revisions.push(RevisionRecord {
            position,
            insert,
            old_surface,
            new_surface: new_surface.to_string(),
            context: Some(key),
        });
        r.snapshots.push(regen.tokens.clone());
        r.current = regen.tokens;
        r.pins = regen.pins;
        Ok(&self.rounds[k])
    }

    /// Closes a round and, with online learning on, takes one optimizer step
    /// on the source and the accepted translation.
    pub fn accept(&mut self, round: u64) -> Result<Acceptance> {
        let k = self.open_round_index(round)?;
        let target: Vec<TokenId> = self.rounds[k]
            .current
            .iter()
            .filter(|t| t.id != PAD)
            .map(|t| t.id)
            .collect();
        let mut outcome = Acceptance {
            loss_before: None,
            loss_after: None,
        };
        if self.config.online_learning && !target.is_empty() {
            let source = self.base.source_vocab.encode(&self.rounds[k].source);
            let lr = self.config.online_learning_rate;
            let params = self.adapted.get_or_insert_with(|| {
                let mut p = self.base.params.clone();
                p.store.reset_optimizer();
                p
            });
            let mut grads = params.store.zero_gradients();
            let before = joint_loss(params, &source, &target, Some(&mut grads))?.total;
            apply(params, grads, lr, None);
            let after = joint_loss(params, &source, &target, None)?.total;
            log::debug!("online update on round {round}: loss {before:.5} -> {after:.5}");
            outcome = Acceptance {
                loss_before: Some(before),
                loss_after: Some(after),
            };
        }
        let tokens = self.rounds[k].current.clone();
        self.record(TranscriptRecord::Accept { round, tokens })?;
        self.rounds[k].closed = true;
        Ok(outcome)
    }

    /// Rebuilds a session by re-running a transcript against `base`, failing
    /// if any recorded hypothesis differs from the recomputed one.
    pub fn replay(base: Arc<TranslationModel>, records: &[TranscriptRecord]) -> Result<Self> {
        let mut it = records.iter();
        let mut session = match it.next() {
            Some(TranscriptRecord::Open { session, config }) => Self::open_with_id(session.clone(), base, config.clone())?,
            _ => return Err(Error::format("transcript", "does not start with an open record")),
        };
        for (line, r) in it.enumerate() {
            let (got, want) = match r {
                TranscriptRecord::Open { .. } => {
                    return Err(Error::format("transcript", format!("second open record at line {}", line + 2)))
                }
                TranscriptRecord::Translate { source, tokens, .. } => (session.translate(source)?.current.clone(), tokens),
                TranscriptRecord::Revise {
                    round,
                    position,
                    new_surface,
                    insert,
                    tokens,
                } => (
                    session.revise(*round, *position, new_surface, *insert)?.current.clone(),
                    tokens,
                ),
                TranscriptRecord::Accept { round, tokens } => {
                    let current = session.round(*round)?.current.clone();
                    session.accept(*round)?;
                    (current, tokens)
                }
            };
            if &got != want {
                return Err(Error::format(
                    "transcript",
                    format!("replay diverged at line {}", line + 2),
                ));
            }
        }
        Ok(session)
    }
}

/// Target words of a hypothesis, spacing dropped; copied unknown words keep
/// their surface.
pub fn render_tokens(model: &TranslationModel, tokens: &[Token]) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !t.is_spacing())
        .map(|t| match &t.surface {
            Some(s) => s.clone(),
            None => model.target_vocab.surface(t.id).unwrap_or("<unk>").to_string(),
        })
        .collect()
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format("transcript", format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// `dir/<id>.jsonl`.
pub fn transcript_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::Origin;
    use crate::model::{ModelConfig, Vocab};

    pub(crate) fn tiny_model(seed: u64) -> Arc<TranslationModel> {
        let words = ["a", "b", "c", "d", "e"];
        let src = Vocab::new(words);
        let tgt = Vocab::new(words.map(str::to_uppercase));
        let params = ModelParameters::new(ModelConfig {
            source_vocab: src.len(),
            target_vocab: tgt.len(),
            embedding: 4,
            encoder_hidden: 3,
            decoder_hidden: 4,
            attention: 3,
            readout: 4,
            init_scale: 1.5,
            seed,
        })
        .unwrap();
        Arc::new(TranslationModel::new(params, src, tgt).unwrap())
    }

    fn config() -> SessionConfig {
        SessionConfig {
            online_learning_rate: 1e-3,
            ..SessionConfig::default()
        }
    }

    #[test]
    fn fresh_session_translates_like_the_base_model() {
        let model = tiny_model(1);
        let mut s = Session::open(model.clone(), config()).unwrap();
        let got = s.translate("a b c").unwrap().current.clone();
        let encoded = encode_source(&model.params, &model.source_vocab.encode(&["a", "b", "c"])).unwrap();
        let want = beam_search(
            SearchContext::new(&model.params, &encoded),
            Direction::Forward,
            SearchConfig::for_source(3, 4),
        )
        .unwrap();
        assert_eq!(got, want.tokens);
        assert!(matches!(s.translate("   "), Err(Error::Empty(_))));
    }

    #[test]
    fn ids_are_unique() {
        let model = tiny_model(1);
        let a = Session::open(model.clone(), config()).unwrap();
        let b = Session::open(model, config()).unwrap();
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn revisions_are_kept_in_order() {
        let model = tiny_model(2);
        let mut s = Session::open(model, config()).unwrap();
        let r = s.translate("a b c d").unwrap().clone();
        let n = r.current.len();
        assert!(n >= 2, "{:?}", r.current);
        let r = s.revise(r.id, n - 1, "B", false).unwrap().clone();
        let r = s.revise(r.id, 0, "E", false).unwrap().clone();
        let words = s.render_tokens(&r.current);
        let b = words.iter().rposition(|w| w == "B").unwrap();
        let e = words.iter().position(|w| w == "E").unwrap();
        assert!(e < b, "{words:?}");
        assert_eq!(r.snapshots.len(), 2);
        assert_eq!(s.revision_count(), 2);
        assert_eq!(s.memory().len(), 2);
        assert!(r.current.iter().any(|t| t.origin == Origin::Constraint));
    }

    #[test]
    fn no_op_revision_keeps_the_word() {
        let model = tiny_model(3);
        let mut s = Session::open(model, config()).unwrap();
        let r = s.translate("b c").unwrap().clone();
        let word = s.surface(&r.current[0]).to_string();
        let r = s.revise(r.id, 0, &word, false).unwrap().clone();
        assert!(s.render_tokens(&r.current).contains(&word));
        assert_eq!(s.revision_count(), 1);
    }

    #[test]
    fn deletion_and_errors() {
        let model = tiny_model(4);
        let mut s = Session::open(model, config()).unwrap();
        let r = s.translate("a b c").unwrap().clone();
        let len = r.current.len();
        let r2 = s.revise(r.id, 0, "", false).unwrap().clone();
        assert!(r2.current.iter().all(|t| !t.is_spacing()));
        assert!(r2.revisions[0].is_deletion());
        assert!(matches!(
            s.revise(r.id, len + 10, "A", false),
            Err(Error::PositionOutOfRange { .. })
        ));
        assert!(matches!(s.revise(99, 0, "A", false), Err(Error::UnknownRound(99))));
        s.accept(r.id).unwrap();
        assert!(matches!(s.revise(r.id, 0, "A", false), Err(Error::RoundClosed(_))));
        assert!(matches!(s.accept(r.id), Err(Error::RoundClosed(_))));
    }

    #[test]
    fn accepting_lowers_the_loss_on_the_pair_and_leaves_the_base_alone() {
        let model = tiny_model(5);
        let snapshot = model.params.clone();
        let mut s = Session::open(model.clone(), config()).unwrap();
        let r = s.translate("a b c").unwrap().clone();
        let out = s.accept(r.id).unwrap();
        assert!(out.loss_after.unwrap() < out.loss_before.unwrap());
        assert_eq!(model.params, snapshot);
        assert_ne!(s.params(), &model.params);
    }

    #[test]
    fn accepting_without_online_learning_changes_nothing() {
        let model = tiny_model(5);
        let mut s = Session::open(
            model.clone(),
            SessionConfig {
                online_learning: false,
                ..config()
            },
        )
        .unwrap();
        let r = s.translate("a b c").unwrap().clone();
        assert_eq!(s.accept(r.id).unwrap().loss_before, None);
        assert_eq!(s.params(), &model.params);
    }

    #[test]
    fn unknown_words_render_with_their_surface() {
        let model = tiny_model(6);
        let mut s = Session::open(model, config()).unwrap();
        let r = s.translate("a b").unwrap().clone();
        let r = s.revise(r.id, 0, "redford", false).unwrap().clone();
        assert_eq!(r.current[0].id, UNK);
        assert!(s.render(&r.current).contains("redford"));
        assert_eq!(s.memory().items().next().unwrap().surface, "redford");
    }

    #[test]
    fn memory_copies_a_revised_unknown_word_into_a_later_translation() {
        let model = tiny_model(6);
        let cfg = SessionConfig {
            memory: MemoryConfig {
                capacity: 10,
                threshold: 0,
            },
            online_learning: false,
            ..config()
        };
        let mut s = Session::open(model.clone(), cfg).unwrap();
        let r = s.translate("a b").unwrap().clone();
        assert!(r.current.iter().all(|t| t.origin == Origin::Model));
        s.revise(r.id, 0, "redford", false).unwrap();
        s.accept(r.id).unwrap();

        // a gate that opens fully at the stored key
        let key = s.memory().items().next().unwrap().key_state.clone();
        let mut params = model.params.clone();
        let norm2: f64 = key.iter().map(|x| x * x).sum();
        let gate = params.layout.gate;
        for (w, k) in params.store.value_mut(gate.state).data_mut().iter_mut().zip(&key) {
            *w = 4.0 * k / norm2;
        }
        params.store.value_mut(gate.context).data_mut().fill(0.0);
        let mut s = s.with_parameters(params).unwrap();
        let r = s.translate("a b").unwrap();
        assert_eq!(r.current[0].surface.as_deref(), Some("redford"));
        assert_eq!(r.current[0].id, UNK);
        assert_eq!(r.current[0].origin, Origin::Copy);
    }

    #[test]
    fn transcript_replays() {
        let model = tiny_model(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let mut s = Session::open(model.clone(), config()).unwrap().with_transcript(&path).unwrap();
        for src in ["a b c", "c d", "e a b"] {
            let r = s.translate(src).unwrap().clone();
            let r = s.revise(r.id, 0, "C", false).unwrap().clone();
            s.accept(r.id).unwrap();
        }
        let records = read_transcript(&path).unwrap();
        assert_eq!(records, s.transcript());
        let again = Session::replay(model.clone(), &records).unwrap();
        assert_eq!(again.rounds(), s.rounds());
        assert_eq!(again.params(), s.params());

        let mut broken = records.clone();
        if let TranscriptRecord::Translate { tokens, .. } = &mut broken[1] {
            tokens.push(Token::model(TokenId(4)));
        }
        assert!(Session::replay(model, &broken).is_err());
    }
}
