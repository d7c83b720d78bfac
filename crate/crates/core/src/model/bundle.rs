use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParameters};
use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::math::{load_checkpoint, save_checkpoint};

pub const PARAMS_FILE: &str = "params.ckpt";
pub const CONFIG_FILE: &str = "model.json";
pub const SOURCE_VOCAB_FILE: &str = "source.vocab";
pub const TARGET_VOCAB_FILE: &str = "target.vocab";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: u32,
    config: ModelConfig,
}

/// Parameters together with the vocabularies they were trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationModel {
    pub params: ModelParameters,
    pub source_vocab: Vocab,
    pub target_vocab: Vocab,
}

impl TranslationModel {
    pub fn new(params: ModelParameters, source_vocab: Vocab, target_vocab: Vocab) -> Result<Self> {
        if params.config.source_vocab != source_vocab.len()
            || params.config.target_vocab != target_vocab.len()
        {
            return Err(Error::Config(format!(
                "model expects vocabularies of {}/{} tokens, got {}/{}",
                params.config.source_vocab,
                params.config.target_vocab,
                source_vocab.len(),
                target_vocab.len()
            )));
        }
        Ok(Self {
            params,
            source_vocab,
            target_vocab,
        })
    }

    /// Writes the bundle into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&self.params.store, &dir.join(PARAMS_FILE))?;
        let manifest = Manifest {
            format: 1,
            config: self.params.config.clone(),
        };
        std::fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&manifest)?)?;
        self.source_vocab.save(&dir.join(SOURCE_VOCAB_FILE))?;
        self.target_vocab.save(&dir.join(TARGET_VOCAB_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        if manifest.format != 1 {
            return Err(Error::format(
                "model bundle",
                format!("unsupported format {}", manifest.format),
            ));
        }
        let store = load_checkpoint(&dir.join(PARAMS_FILE))?;
        let params = ModelParameters::from_store(manifest.config, store)?;
        let source_vocab = Vocab::load(&dir.join(SOURCE_VOCAB_FILE))?;
        let target_vocab = Vocab::load(&dir.join(TARGET_VOCAB_FILE))?;
        Self::new(params, source_vocab, target_vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trip() {
        let sv = Vocab::new(["a", "b", "c"]);
        let tv = Vocab::new(["x", "y"]);
        let params = ModelParameters::new(ModelConfig {
            source_vocab: sv.len(),
            target_vocab: tv.len(),
            embedding: 3,
            encoder_hidden: 2,
            decoder_hidden: 3,
            attention: 2,
            readout: 3,
            ..ModelConfig::default()
        })
        .unwrap();
        let model = TranslationModel::new(params, sv, tv).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        assert_eq!(TranslationModel::load(dir.path()).unwrap(), model);
        assert!(TranslationModel::load(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn vocab_size_mismatch_rejected() {
        let params = ModelParameters::new(ModelConfig {
            source_vocab: 6,
            target_vocab: 6,
            embedding: 2,
            encoder_hidden: 2,
            decoder_hidden: 2,
            attention: 2,
            readout: 2,
            ..ModelConfig::default()
        })
        .unwrap();
        assert!(TranslationModel::new(params, Vocab::new(["a"]), Vocab::new(["b", "c"])).is_err());
    }
}
