use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::bleu::corpus_bleu;
use super::oracle::critical_revision_oracle;
use crate::corpus::ParallelCorpus;
use crate::decoding::{Strategy, DEFAULT_BEAM};
use crate::error::{Error, Result};
use crate::memory::MemoryConfig;
use crate::model::{TranslationModel, RESERVED, UNK};
use crate::session::{Session, SessionConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub strategy: Strategy,
    /// Revisions allowed per sentence.
    pub max_revisions: usize,
    pub online_learning: bool,
    pub use_memory: bool,
    pub beam_size: usize,
    pub memory: MemoryConfig,
    pub online_learning_rate: f64,
    /// Keep adapted parameters from one session to the next instead of
    /// starting every session from the base model.
    pub carry_parameters: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::BiDir,
            max_revisions: 4,
            online_learning: true,
            use_memory: true,
            beam_size: DEFAULT_BEAM,
            memory: MemoryConfig::default(),
            online_learning_rate: 1e-5,
            carry_parameters: false,
        }
    }
}

impl SimulationConfig {
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            beam_size: self.beam_size,
            strategy: self.strategy,
            memory: self.memory,
            use_memory: self.use_memory,
            online_learning: self.online_learning,
            online_learning_rate: self.online_learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceOutcome {
    pub session: usize,
    /// Position of the sentence within its session.
    pub index: usize,
    pub session_len: usize,
    pub reference: Vec<String>,
    /// Output after `k` revisions, for `k` in `0..=max_revisions`.
    pub outputs: Vec<Vec<String>>,
    pub revisions: usize,
}

impl SentenceOutcome {
    pub fn in_second_half(&self) -> bool {
        2 * self.index >= self.session_len
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetrics {
    pub config: SimulationConfig,
    /// Corpus BLEU at each budget `0..=max_revisions`.
    pub bleu: Vec<f64>,
    pub average_revisions: f64,
    /// Unknown-word placeholders left in the final outputs.
    pub unk_count: usize,
    pub sentences: Vec<SentenceOutcome>,
}

impl SimulationMetrics {
    /// Corpus BLEU per budget over the sentences selected by `keep`.
    pub fn bleu_where(&self, keep: impl Fn(&SentenceOutcome) -> bool) -> Result<Vec<f64>> {
        let chosen: Vec<&SentenceOutcome> = self.sentences.iter().filter(|s| keep(s)).collect();
        bleu_by_budget(&chosen, self.config.max_revisions)
    }
}

fn bleu_by_budget(sentences: &[&SentenceOutcome], max: usize) -> Result<Vec<f64>> {
    let refs: Vec<Vec<Vec<String>>> = sentences.iter().map(|s| vec![s.reference.clone()]).collect();
    (0..=max)
        .map(|k| {
            let hyps: Vec<Vec<String>> = sentences.iter().map(|s| s.outputs[k].clone()).collect();
            corpus_bleu(&hyps, &refs)
        })
        .collect()
}

/// Runs the simulated human over every session of `test`: translate,
/// apply up to `max_revisions` oracle revisions, accept.
pub fn run_ideal_session(model: Arc<TranslationModel>, test: &ParallelCorpus, config: &SimulationConfig) -> Result<SimulationMetrics> {
    test.validate()?;
    if test.pairs.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let unk = RESERVED[UNK.index()];
    let mut sentences = Vec::with_capacity(test.pairs.len());
    let mut carried = None;
    for (si, span) in test.sessions.iter().enumerate() {
        let mut session = Session::open_with_id(format!("sim-{si}"), model.clone(), config.session_config())?;
        if let Some(p) = carried.take() {
            session = session.with_parameters(p)?;
        }
        for (index, pair) in test.pairs[span.range()].iter().enumerate() {
            let refs = [pair.target.clone()];
            let round = session.translate(&pair.source.join(" "))?.id;
            let mut outputs = vec![session.render_tokens(&session.round(round)?.current)];
            let mut revisions = 0;
            for _ in 0..config.max_revisions {
                let next = if outputs.last().unwrap() == &pair.target {
                    None
                } else {
                    critical_revision_oracle(&session, round, &refs)?
                };
                match next {
                    Some(c) => {
                        let tokens = session.revise(round, c.position, &c.surface, c.insert)?.current.clone();
                        revisions += 1;
                        outputs.push(session.render_tokens(&tokens));
                    }
                    None => outputs.push(outputs.last().unwrap().clone()),
                }
            }
            session.accept(round)?;
            sentences.push(SentenceOutcome {
                session: si,
                index,
                session_len: span.len,
                reference: pair.target.clone(),
                outputs,
                revisions,
            });
        }
        if config.carry_parameters {
            carried = Some(session.into_params());
        }
    }
    let all: Vec<&SentenceOutcome> = sentences.iter().collect();
    let bleu = bleu_by_budget(&all, config.max_revisions)?;
    let unk_count = sentences
        .iter()
        .map(|s| s.outputs.last().unwrap().iter().filter(|w| *w == unk).count())
        .sum();
    let average_revisions = sentences.iter().map(|s| s.revisions).sum::<usize>() as f64 / sentences.len() as f64;
    log::info!(
        "{}: bleu {:?}, {:.2} revisions per sentence, {} unk",
        config.strategy,
        bleu,
        average_revisions,
        unk_count
    );
    Ok(SimulationMetrics {
        config: config.clone(),
        bleu,
        average_revisions,
        unk_count,
        sentences,
    })
}
