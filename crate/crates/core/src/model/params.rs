use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, BOS, EOS};
use crate::error::{Error, Result};
use crate::math::{GruParams, ParamId, ParamStore, Tensor};

/// Network dimensions and initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub embedding: usize,
    /// Per direction; annotations are twice this wide.
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub attention: usize,
    pub readout: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            source_vocab: 0,
            target_vocab: 0,
            embedding: 32,
            encoder_hidden: 32,
            decoder_hidden: 64,
            attention: 32,
            readout: 64,
            init_scale: 0.08,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn annotation_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("source_vocab", self.source_vocab),
            ("target_vocab", self.target_vocab),
            ("embedding", self.embedding),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("attention", self.attention),
            ("readout", self.readout),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.source_vocab <= super::vocab::RESERVED.len()
            || self.target_vocab <= super::vocab::RESERVED.len()
        {
            return Err(Error::Config(
                "vocabularies must contain more than the reserved tokens".into(),
            ));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Which of the two decoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Backward => 1,
        }
    }

    /// Token fed at the first step.
    pub fn start_token(self) -> TokenId {
        match self {
            Direction::Forward => BOS,
            Direction::Backward => EOS,
        }
    }

    /// Token whose emission completes a hypothesis.
    pub fn terminal_token(self) -> TokenId {
        match self {
            Direction::Forward => EOS,
            Direction::Backward => BOS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderParams {
    pub init_weight: ParamId,
    pub init_bias: ParamId,
    pub att_query: ParamId,
    pub att_key: ParamId,
    pub att_score: ParamId,
    pub gru: GruParams,
    pub readout_weight: ParamId,
    pub readout_bias: ParamId,
    pub output_weight: ParamId,
    pub output_bias: ParamId,
}

/// Copy-gate and memory-scoring weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GateParams {
    /// Scalar weight on `|s · s'|`.
    pub state_similarity: ParamId,
    /// Scalar weight on `|c · c'|`.
    pub context_similarity: ParamId,
    /// Row vector applied to the decoder state.
    pub state: ParamId,
    /// Row vector applied to the context vector.
    pub context: ParamId,
}

impl GateParams {
    pub fn ids(&self) -> [ParamId; 4] {
        [
            self.state_similarity,
            self.context_similarity,
            self.state,
            self.context,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub source_embedding: ParamId,
    pub target_embedding: ParamId,
    pub encoder: [GruParams; 2],
    pub decoders: [DecoderParams; 2],
    pub gate: GateParams,
}

impl Layout {
    pub fn decoder(&self, direction: Direction) -> &DecoderParams {
        &self.decoders[direction.index()]
    }
}

/// All trainable tensors plus their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub layout: Layout,
}

impl ModelParameters {
    /// Fresh parameters, uniform in `[-init_scale, init_scale]` from the
    /// config seed.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let layout = build_layout(&config, &mut store, &mut rng);
        Ok(Self {
            config,
            store,
            layout,
        })
    }

    /// Wraps a loaded store, checking that names and shapes match the config.
    pub fn from_store(config: ModelConfig, loaded: ParamStore) -> Result<Self> {
        let mut fresh = Self::new(ModelConfig {
            init_scale: 0.0,
            ..config.clone()
        })?;
        fresh.config = config;
        if fresh.store.len() != loaded.len() {
            return Err(Error::format(
                "checkpoint",
                format!(
                    "expected {} tensors, found {}",
                    fresh.store.len(),
                    loaded.len()
                ),
            ));
        }
        for id in fresh.store.ids() {
            let name = fresh.store.name(id);
            let other = loaded
                .id(name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
            if other.index() != id.index()
                || loaded.value(other).shape() != fresh.store.value(id).shape()
            {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor {name} has unexpected position or shape"),
                ));
            }
        }
        fresh.store = loaded;
        Ok(fresh)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        self.store.value(id)
    }
}

fn build_layout(config: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Layout {
    let scale = config.init_scale;
    let e = config.embedding;
    let a = config.annotation_dim();
    let hd = config.decoder_hidden;
    let source_embedding = store.add(
        "embedding.source",
        Tensor::uniform(&[config.source_vocab, e], scale, rng),
    );
    let target_embedding = store.add(
        "embedding.target",
        Tensor::uniform(&[config.target_vocab, e], scale, rng),
    );
    let encoder = [
        GruParams::register(store, "encoder.forward", e, config.encoder_hidden, scale, rng),
        GruParams::register(store, "encoder.backward", e, config.encoder_hidden, scale, rng),
    ];
    let mut decoder = |name: &str, store: &mut ParamStore| DecoderParams {
        init_weight: store.add(
            format!("{name}.init.weight"),
            Tensor::uniform(&[hd, a], scale, rng),
        ),
        init_bias: store.add(format!("{name}.init.bias"), Tensor::uniform(&[hd], scale, rng)),
        att_query: store.add(
            format!("{name}.attention.query"),
            Tensor::uniform(&[config.attention, hd], scale, rng),
        ),
        att_key: store.add(
            format!("{name}.attention.key"),
            Tensor::uniform(&[config.attention, a], scale, rng),
        ),
        att_score: store.add(
            format!("{name}.attention.score"),
            Tensor::uniform(&[config.attention], scale, rng),
        ),
        gru: GruParams::register(store, &format!("{name}.gru"), e + a, hd, scale, rng),
        readout_weight: store.add(
            format!("{name}.readout.weight"),
            Tensor::uniform(&[config.readout, hd + a], scale, rng),
        ),
        readout_bias: store.add(
            format!("{name}.readout.bias"),
            Tensor::uniform(&[config.readout], scale, rng),
        ),
        output_weight: store.add(
            format!("{name}.output.weight"),
            Tensor::uniform(&[config.target_vocab, config.readout], scale, rng),
        ),
        output_bias: store.add(
            format!("{name}.output.bias"),
            Tensor::uniform(&[config.target_vocab], scale, rng),
        ),
    };
    let decoders = [
        decoder("decoder.forward", store),
        decoder("decoder.backward", store),
    ];
    let gate = GateParams {
        state_similarity: store.add("memory.state_similarity", Tensor::from_vec(&[1], vec![1.0]).unwrap()),
        context_similarity: store.add(
            "memory.context_similarity",
            Tensor::from_vec(&[1], vec![1.0]).unwrap(),
        ),
        state: store.add("memory.gate.state", Tensor::uniform(&[hd], scale, rng)),
        context: store.add("memory.gate.context", Tensor::uniform(&[a], scale, rng)),
    };
    Layout {
        source_embedding,
        target_embedding,
        encoder,
        decoders,
        gate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            source_vocab: 7,
            target_vocab: 8,
            embedding: 3,
            encoder_hidden: 2,
            decoder_hidden: 4,
            attention: 3,
            readout: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ModelParameters::new(tiny()).unwrap();
        let b = ModelParameters::new(tiny()).unwrap();
        assert_eq!(a, b);
        let c = ModelParameters::new(ModelConfig { seed: 9, ..tiny() }).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn initialization_respects_scale() {
        let p = ModelParameters::new(tiny()).unwrap();
        let gate = p.layout.gate;
        for id in p.store.ids() {
            if id == gate.state_similarity || id == gate.context_similarity {
                continue;
            }
            assert!(p.store.value(id).data().iter().all(|x| x.abs() <= 0.08));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(ModelParameters::new(ModelConfig {
            embedding: 0,
            ..tiny()
        })
        .is_err());
        assert!(ModelParameters::new(ModelConfig {
            target_vocab: 4,
            ..tiny()
        })
        .is_err());
    }

    #[test]
    fn from_store_checks_layout() {
        let p = ModelParameters::new(tiny()).unwrap();
        let back = ModelParameters::from_store(tiny(), p.store.clone()).unwrap();
        assert_eq!(back, p);
        let other = ModelParameters::new(ModelConfig {
            readout: 6,
            ..tiny()
        })
        .unwrap();
        assert!(ModelParameters::from_store(tiny(), other.store).is_err());
    }
}
