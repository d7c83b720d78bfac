//! Forward computations: bidirectional recurrent encoder, additive attention
//! and one decoder step.

use std::sync::Arc;

use super::params::{DecoderParams, Direction, ModelParameters};
use super::vocab::{TokenId, PAD};
use crate::error::{Error, Result};
use crate::math::gru::{gru_forward, GruCache};
use crate::math::tensor::{axpy, dot, matvec, Tensor};
use crate::math::activation::softmax_in_place;

/// Encoder output: one annotation vector per source position.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotations {
    /// `len × 2·encoder_hidden`, forward state then backward state.
    pub vectors: Tensor,
}

impl Annotations {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for i in 0..self.len() {
            axpy(1.0, self.row(i), &mut m);
        }
        let inv = 1.0 / self.len() as f64;
        m.iter_mut().for_each(|x| *x *= inv);
        m
    }
}

/// Annotations plus the per-decoder attention key projections, computed once
/// per source sentence.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    pub source: Vec<TokenId>,
    pub annotations: Annotations,
    /// `keys[d]` is `len × attention`, the key projection of every annotation
    /// for decoder `d`.
    pub keys: [Tensor; 2],
}

pub(crate) struct EncoderCache {
    pub forward: Vec<GruCache>,
    pub backward: Vec<GruCache>,
}

fn check_source(params: &ModelParameters, source: &[TokenId]) -> Result<()> {
    if source.is_empty() {
        return Err(Error::Empty("source sentence"));
    }
    for id in source {
        if id.index() >= params.config.source_vocab {
            return Err(Error::InvalidToken {
                id: id.0,
                size: params.config.source_vocab,
            });
        }
    }
    Ok(())
}

pub(crate) fn encode_with_cache(
    params: &ModelParameters,
    source: &[TokenId],
) -> Result<(Annotations, EncoderCache)> {
    check_source(params, source)?;
    let store = &params.store;
    let emb = store.value(params.layout.source_embedding);
    let he = params.config.encoder_hidden;
    let n = source.len();

    let mut forward = Vec::with_capacity(n);
    let mut h = vec![0.0; he];
    for id in source {
        let cache = gru_forward(store, &params.layout.encoder[0], &h, emb.row(id.index()));
        h.clone_from(&cache.h);
        forward.push(cache);
    }
    let mut backward = Vec::with_capacity(n);
    let mut h = vec![0.0; he];
    for id in source.iter().rev() {
        let cache = gru_forward(store, &params.layout.encoder[1], &h, emb.row(id.index()));
        h.clone_from(&cache.h);
        backward.push(cache);
    }
    backward.reverse();

    let mut vectors = Tensor::zeros(&[n, 2 * he]);
    for i in 0..n {
        let row = vectors.row_mut(i);
        row[..he].copy_from_slice(&forward[i].h);
        row[he..].copy_from_slice(&backward[i].h);
    }
    Ok((Annotations { vectors }, EncoderCache { forward, backward }))
}

/// Runs the bidirectional encoder.
pub fn encode(params: &ModelParameters, source: &[TokenId]) -> Result<Annotations> {
    encode_with_cache(params, source).map(|(a, _)| a)
}

pub(crate) fn attention_keys(params: &ModelParameters, dec: &DecoderParams, annotations: &Annotations) -> Tensor {
    let proj = params.store.value(dec.att_key);
    let mut keys = Tensor::zeros(&[annotations.len(), proj.rows()]);
    for i in 0..annotations.len() {
        matvec(proj, annotations.row(i), keys.row_mut(i));
    }
    keys
}

/// Encodes a source sentence and precomputes attention keys for both decoders.
pub fn encode_source(params: &ModelParameters, source: &[TokenId]) -> Result<EncodedSource> {
    let annotations = encode(params, source)?;
    Ok(prepare(params, source.to_vec(), annotations))
}

pub(crate) fn prepare(params: &ModelParameters, source: Vec<TokenId>, annotations: Annotations) -> EncodedSource {
    let keys = [
        attention_keys(params, &params.layout.decoders[0], &annotations),
        attention_keys(params, &params.layout.decoders[1], &annotations),
    ];
    EncodedSource {
        source,
        annotations,
        keys,
    }
}

/// Result of one attention read.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    /// `tanh(W_q r + k_i)` per annotation, kept for backpropagation.
    pub hidden: Vec<Vec<f64>>,
}

/// Additive attention: `e_i = v · tanh(W_q r + K h_i)`, weights are the
/// softmax of `e`, context is the weighted sum of annotations.
pub fn attend(
    params: &ModelParameters,
    direction: Direction,
    query: &[f64],
    encoded: &EncodedSource,
) -> Attention {
    let dec = params.layout.decoder(direction);
    let store = &params.store;
    let keys = &encoded.keys[direction.index()];
    let score = store.value(dec.att_score).data();
    let mut q = vec![0.0; keys.cols()];
    matvec(store.value(dec.att_query), query, &mut q);

    let n = encoded.annotations.len();
    let mut hidden = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let a: Vec<f64> = q.iter().zip(keys.row(i)).map(|(x, k)| (x + k).tanh()).collect();
        weights.push(dot(score, &a));
        hidden.push(a);
    }
    softmax_in_place(&mut weights);
    let mut context = vec![0.0; encoded.annotations.dim()];
    for (i, w) in weights.iter().enumerate() {
        axpy(*w, encoded.annotations.row(i), &mut context);
    }
    Attention {
        weights,
        context,
        hidden,
    }
}

/// Decoder state after consuming a token: `state` predicts the next token.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub direction: Direction,
    /// Hidden state `s_j`.
    pub state: Vec<f64>,
    /// Context vector `c_j`.
    pub context: Vec<f64>,
    /// Attention query used to compute `c_j` (the previous hidden state).
    pub query: Vec<f64>,
    pub attention_weights: Vec<f64>,
    /// Unnormalized scores over the target vocabulary.
    pub logits: Vec<f64>,
}

/// Cached intermediates of one decoder step, for backpropagation.
pub(crate) struct StepCache {
    pub query: Vec<f64>,
    pub input_token: TokenId,
    pub attention: Attention,
    pub gru: GruCache,
    pub features: Vec<f64>,
    pub readout: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Initial hidden state `tanh(W mean(H) + b)`.
pub fn initial_hidden(params: &ModelParameters, direction: Direction, annotations: &Annotations) -> Vec<f64> {
    let dec = params.layout.decoder(direction);
    let mut s = vec![0.0; params.config.decoder_hidden];
    matvec(params.store.value(dec.init_weight), &annotations.mean(), &mut s);
    for (x, b) in s.iter_mut().zip(params.store.value(dec.init_bias).data()) {
        *x = (*x + b).tanh();
    }
    s
}

pub(crate) fn step_forward(
    params: &ModelParameters,
    direction: Direction,
    encoded: &EncodedSource,
    prev_state: &[f64],
    prev_token: TokenId,
) -> StepCache {
    let dec = params.layout.decoder(direction);
    let store = &params.store;
    let attention = attend(params, direction, prev_state, encoded);

    let emb = store.value(params.layout.target_embedding).row(prev_token.index());
    let mut x = Vec::with_capacity(emb.len() + attention.context.len());
    x.extend_from_slice(emb);
    x.extend_from_slice(&attention.context);
    let gru = gru_forward(store, &dec.gru, prev_state, &x);

    let mut features = Vec::with_capacity(gru.h.len() + attention.context.len());
    features.extend_from_slice(&gru.h);
    features.extend_from_slice(&attention.context);
    let mut readout = vec![0.0; params.config.readout];
    matvec(store.value(dec.readout_weight), &features, &mut readout);
    for (r, b) in readout.iter_mut().zip(store.value(dec.readout_bias).data()) {
        *r = (*r + b).tanh();
    }
    let mut logits = vec![0.0; params.config.target_vocab];
    matvec(store.value(dec.output_weight), &readout, &mut logits);
    axpy(1.0, store.value(dec.output_bias).data(), &mut logits);

    StepCache {
        query: prev_state.to_vec(),
        input_token: prev_token,
        attention,
        gru,
        features,
        readout,
        logits,
    }
}

impl DecoderState {
    fn from_cache(direction: Direction, cache: StepCache) -> Self {
        Self {
            direction,
            state: cache.gru.h,
            context: cache.attention.context,
            query: cache.query,
            attention_weights: cache.attention.weights,
            logits: cache.logits,
        }
    }

    /// Softmax of the logits: the model distribution over the next token.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut p = self.logits.clone();
        softmax_in_place(&mut p);
        p
    }
}

/// One decoder step: consume `prev_token` from `prev_state`.
///
/// Feeding [`PAD`] (the spacing token) leaves the state unchanged.
pub fn decoder_step(
    params: &ModelParameters,
    direction: Direction,
    encoded: &EncodedSource,
    prev_state: &DecoderState,
    prev_token: TokenId,
) -> Result<DecoderState> {
    if prev_token.index() >= params.config.target_vocab {
        return Err(Error::InvalidToken {
            id: prev_token.0,
            size: params.config.target_vocab,
        });
    }
    if prev_state.direction != direction {
        return Err(Error::Contract("decoder state belongs to the other direction".into()));
    }
    if prev_token == PAD {
        return Ok(prev_state.clone());
    }
    let cache = step_forward(params, direction, encoded, &prev_state.state, prev_token);
    Ok(DecoderState::from_cache(direction, cache))
}

/// State after the start token has been consumed.
pub fn start_state(params: &ModelParameters, direction: Direction, encoded: &EncodedSource) -> DecoderState {
    let s0 = initial_hidden(params, direction, &encoded.annotations);
    let cache = step_forward(params, direction, encoded, &s0, direction.start_token());
    DecoderState::from_cache(direction, cache)
}

/// Teacher-forces `tokens` after the start token and returns every
/// intermediate state: `states[k]` predicts the token at position `k`.
pub fn prime(
    params: &ModelParameters,
    direction: Direction,
    encoded: &EncodedSource,
    tokens: &[TokenId],
) -> Result<Vec<Arc<DecoderState>>> {
    let mut states = Vec::with_capacity(tokens.len() + 1);
    let mut state = start_state(params, direction, encoded);
    for t in tokens {
        let next = decoder_step(params, direction, encoded, &state, *t)?;
        states.push(Arc::new(std::mem::replace(&mut state, next)));
    }
    states.push(Arc::new(state));
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;
    use crate::model::vocab::{BOS, EOS};

    pub(crate) fn tiny_params(seed: u64) -> ModelParameters {
        ModelParameters::new(ModelConfig {
            source_vocab: 9,
            target_vocab: 8,
            embedding: 3,
            encoder_hidden: 2,
            decoder_hidden: 4,
            attention: 3,
            readout: 5,
            init_scale: 0.5,
            seed,
        })
        .unwrap()
    }

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&x| TokenId(x)).collect()
    }

    #[test]
    fn encode_preserves_length_and_is_deterministic() {
        let p = tiny_params(3);
        let a = encode(&p, &ids(&[4, 5, 6, 7, 8])).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a.dim(), 4);
        let b = encode(&p, &ids(&[4, 5, 6, 7, 8])).unwrap();
        assert_eq!(a, b);
        let single = encode(&p, &ids(&[4])).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single.vectors.is_finite());
    }

    #[test]
    fn encode_rejects_bad_input() {
        let p = tiny_params(3);
        assert!(matches!(encode(&p, &[]), Err(Error::Empty(_))));
        assert!(matches!(
            encode(&p, &ids(&[4, 99])),
            Err(Error::InvalidToken { id: 99, .. })
        ));
    }

    #[test]
    fn zero_scores_give_uniform_attention() {
        let mut p = tiny_params(1);
        let score = p.layout.decoders[0].att_score;
        p.store.value_mut(score).fill(0.0);
        let enc = encode_source(&p, &ids(&[4, 5, 6])).unwrap();
        let att = attend(&p, Direction::Forward, &[0.1, 0.2, -0.3, 0.4], &enc);
        for w in &att.weights {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let mean = enc.annotations.mean();
        for (c, m) in att.context.iter().zip(&mean) {
            assert!((c - m).abs() < 1e-15);
        }
    }

    #[test]
    fn singleton_attention() {
        let p = tiny_params(2);
        let enc = encode_source(&p, &ids(&[5])).unwrap();
        let att = attend(&p, Direction::Backward, &[0.3, 0.0, 0.1, -0.2], &enc);
        assert_eq!(att.weights, vec![1.0]);
        assert_eq!(att.context, enc.annotations.row(0));
    }

    /// Scores [1, 2]: zero query weights, `v = [4, 0, 0]` and keys chosen so
    /// that `4·tanh(k_i)` equals the desired score.
    #[test]
    fn known_scores_give_known_weights() {
        let mut p = tiny_params(1);
        let dec = p.layout.decoders[0];
        p.store.value_mut(dec.att_query).fill(0.0);
        p.store.value_mut(dec.att_score).fill(0.0);
        p.store.value_mut(dec.att_score).data_mut()[0] = 4.0;
        let mut enc = encode_source(&p, &ids(&[4, 5])).unwrap();
        enc.keys[0].fill(0.0);
        enc.keys[0].row_mut(0)[0] = 0.25f64.atanh();
        enc.keys[0].row_mut(1)[0] = 0.5f64.atanh();
        let att = attend(&p, Direction::Forward, &[0.3, -0.1, 0.2, 0.0], &enc);
        assert!((att.weights[0] - 0.26894).abs() < 1e-5);
        assert!((att.weights[1] - 0.73106).abs() < 1e-5);
        let e = std::f64::consts::E;
        assert!((att.weights[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn decoder_output_is_distribution_and_deterministic() {
        let p = tiny_params(4);
        let enc = encode_source(&p, &ids(&[4, 6, 8])).unwrap();
        let s = start_state(&p, Direction::Forward, &enc);
        let total: f64 = s.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        let a = decoder_step(&p, Direction::Forward, &enc, &s, TokenId(5)).unwrap();
        let b = decoder_step(&p, Direction::Forward, &enc, &s, TokenId(5)).unwrap();
        assert_eq!(a, b);
        let w: f64 = a.attention_weights.iter().sum();
        assert!((w - 1.0).abs() < 1e-9);
        assert!(decoder_step(&p, Direction::Forward, &enc, &s, TokenId(8)).is_err());
        assert!(decoder_step(&p, Direction::Backward, &enc, &s, TokenId(5)).is_err());
        let same = decoder_step(&p, Direction::Forward, &enc, &s, PAD).unwrap();
        assert_eq!(same, s);
    }

    #[test]
    fn prime_returns_one_state_per_position() {
        let p = tiny_params(4);
        let enc = encode_source(&p, &ids(&[4, 6])).unwrap();
        let states = prime(&p, Direction::Backward, &enc, &ids(&[5, 6, 7])).unwrap();
        assert_eq!(states.len(), 4);
        assert_eq!(*states[0], start_state(&p, Direction::Backward, &enc));
        let _ = (BOS, EOS);
    }
}
