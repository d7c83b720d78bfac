//! Encoder, the two decoders, and the joint training objective.

mod bundle;
mod loss;
mod network;
mod params;
mod train;
mod vocab;

pub use bundle::{TranslationModel, CONFIG_FILE, PARAMS_FILE, SOURCE_VOCAB_FILE, TARGET_VOCAB_FILE};
pub use loss::{direction_loss, joint_loss, LossBreakdown};
pub use network::{
    attend, decoder_step, encode, encode_source, initial_hidden, prime, start_state, Annotations,
    Attention, DecoderState, EncodedSource,
};
pub use params::{DecoderParams, Direction, GateParams, Layout, ModelConfig, ModelParameters};
pub use train::{apply, token_accuracy, train, train_in_place, CurvePoint, Pair, TrainConfig, TrainingCurve};
pub use vocab::{TokenId, Vocab, BOS, EOS, PAD, RESERVED, UNK};
