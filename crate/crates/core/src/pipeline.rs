//! Corpus to trained model in one call: vocabularies, the bi-directional
//! model, then the memory parameters.

use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, ParallelCorpus};
use crate::error::Result;
use crate::memory::{train_memory_params, MemoryTrainConfig, MemoryTrainReport};
use crate::model::{token_accuracy, train, Direction, ModelConfig, TrainConfig, TrainingCurve, TranslationModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    /// Vocabulary sizes are filled in from the corpus.
    pub model: ModelConfig,
    pub max_vocab: usize,
    pub train: TrainConfig,
    pub memory: MemoryTrainConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            max_vocab: 30_000,
            train: TrainConfig::default(),
            memory: MemoryTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedSystem {
    pub model: TranslationModel,
    pub curve: TrainingCurve,
    pub memory: MemoryTrainReport,
    /// Teacher-forced forward accuracy on the held-out corpus, if given.
    pub held_out_accuracy: Option<f64>,
}

pub fn train_system(corpus: &ParallelCorpus, held_out: Option<&ParallelCorpus>, config: &SystemConfig) -> Result<TrainedSystem> {
    corpus.validate()?;
    config.train.validate()?;
    // Rare names stay unknown on both sides, as unseen names would be.
    let rare = corpus.rare_inventory();
    let source_vocab = build_vocab(corpus.pairs.iter().map(|p| p.source.as_slice()), config.max_vocab, &rare)?;
    let target_vocab = build_vocab(corpus.pairs.iter().map(|p| p.target.as_slice()), config.max_vocab, &rare)?;
    let model_config = ModelConfig {
        source_vocab: source_vocab.len(),
        target_vocab: target_vocab.len(),
        ..config.model.clone()
    };
    log::info!(
        "vocabularies: {} source, {} target; {} training pairs",
        source_vocab.len(),
        target_vocab.len(),
        corpus.pairs.len()
    );
    let pairs = corpus.encode(&source_vocab, &target_vocab);
    let (params, curve) = train(model_config, &pairs, &config.train)?;
    let mut model = TranslationModel::new(params, source_vocab, target_vocab)?;
    let memory = train_memory_params(&mut model, corpus, &config.memory)?;
    let held_out_accuracy = match held_out {
        Some(h) if !h.pairs.is_empty() => {
            let pairs = h.encode(&model.source_vocab, &model.target_vocab);
            Some(token_accuracy(&model.params, Direction::Forward, &pairs)?)
        }
        _ => None,
    };
    Ok(TrainedSystem {
        model,
        curve,
        memory,
        held_out_accuracy,
    })
}
