//! Length-normalized cross-entropy for both decoders and its gradient.

use super::network::{encode_with_cache, initial_hidden, prepare, step_forward, EncodedSource, StepCache};
use super::params::{Direction, ModelParameters};
use super::vocab::{TokenId, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::math::activation::softmax_in_place;
use crate::math::gru::gru_backward;
use crate::math::params::Gradients;
use crate::math::tensor::{matvec_t_acc, outer_acc, Tensor};

/// Per-decoder negative log-likelihoods and their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    /// `−L_L`: forward decoder, mean over target tokens plus the terminal.
    pub forward: f64,
    /// `−L_R`: backward decoder on the reversed target.
    pub backward: f64,
    pub total: f64,
}

fn check_target(params: &ModelParameters, target: &[TokenId]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::Empty("target sentence"));
    }
    for id in target {
        if id.index() >= params.config.target_vocab {
            return Err(Error::InvalidToken {
                id: id.0,
                size: params.config.target_vocab,
            });
        }
        if matches!(*id, PAD | BOS | EOS) {
            return Err(Error::Contract("target contains a reserved token".into()));
        }
    }
    Ok(())
}

/// Teacher-forced input/output sequences for one decoder.
fn decoder_sequences(direction: Direction, target: &[TokenId]) -> (Vec<TokenId>, Vec<TokenId>) {
    let mut body: Vec<TokenId> = target.to_vec();
    if direction == Direction::Backward {
        body.reverse();
    }
    let mut inputs = Vec::with_capacity(body.len() + 1);
    inputs.push(direction.start_token());
    inputs.extend_from_slice(&body);
    let mut outputs = body;
    outputs.push(direction.terminal_token());
    (inputs, outputs)
}

/// Mean negative log-likelihood of one decoder, optionally backpropagating
/// into `grads` and the annotation gradient `d_annotations`.
fn decoder_pass(
    params: &ModelParameters,
    direction: Direction,
    encoded: &EncodedSource,
    target: &[TokenId],
    backprop: Option<(&mut Gradients, &mut Tensor)>,
) -> f64 {
    let (inputs, outputs) = decoder_sequences(direction, target);
    let steps = inputs.len();
    let scale = 1.0 / steps as f64;

    let s0 = initial_hidden(params, direction, &encoded.annotations);
    let mut caches: Vec<StepCache> = Vec::with_capacity(steps);
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut nll = 0.0;
    let mut state = s0.clone();
    for (input, output) in inputs.iter().zip(&outputs) {
        let cache = step_forward(params, direction, encoded, &state, *input);
        let mut p = cache.logits.clone();
        softmax_in_place(&mut p);
        nll -= p[output.index()].ln();
        state.clone_from(&cache.gru.h);
        caches.push(cache);
        probs.push(p);
    }
    let loss = nll * scale;

    let Some((grads, d_annotations)) = backprop else {
        return loss;
    };

    let store = &params.store;
    let dec = params.layout.decoder(direction);
    let hd = params.config.decoder_hidden;
    let e = params.config.embedding;
    let n = encoded.annotations.len();
    let keys = &encoded.keys[direction.index()];
    let mut d_keys = Tensor::zeros(&[n, keys.cols()]);
    let mut ds_next = vec![0.0; hd];

    for j in (0..steps).rev() {
        let cache = &caches[j];
        let mut dlogits = std::mem::take(&mut probs[j]);
        dlogits[outputs[j].index()] -= 1.0;
        dlogits.iter_mut().for_each(|g| *g *= scale);

        outer_acc(grads.get_mut(dec.output_weight), &dlogits, &cache.readout);
        crate::math::tensor::axpy(1.0, &dlogits, grads.get_mut(dec.output_bias).data_mut());
        let mut d_readout = vec![0.0; cache.readout.len()];
        matvec_t_acc(store.value(dec.output_weight), &dlogits, &mut d_readout);
        for (g, r) in d_readout.iter_mut().zip(&cache.readout) {
            *g *= 1.0 - r * r;
        }
        outer_acc(grads.get_mut(dec.readout_weight), &d_readout, &cache.features);
        crate::math::tensor::axpy(1.0, &d_readout, grads.get_mut(dec.readout_bias).data_mut());
        let mut d_features = vec![0.0; cache.features.len()];
        matvec_t_acc(store.value(dec.readout_weight), &d_readout, &mut d_features);

        let mut ds = d_features[..hd].to_vec();
        crate::math::tensor::axpy(1.0, &ds_next, &mut ds);
        let mut dc = d_features[hd..].to_vec();

        let mut dx = vec![0.0; cache.gru.x.len()];
        let mut ds_prev = vec![0.0; hd];
        gru_backward(store, &dec.gru, &cache.gru, &ds, grads, &mut dx, &mut ds_prev);
        let emb_grad = grads
            .get_mut(params.layout.target_embedding)
            .row_mut(cache.input_token.index());
        crate::math::tensor::axpy(1.0, &dx[..e], emb_grad);
        crate::math::tensor::axpy(1.0, &dx[e..], &mut dc);

        attention_backward(params, direction, encoded, cache, &dc, grads, d_annotations, &mut d_keys, &mut ds_prev);
        ds_next = ds_prev;
    }

    // keys = K h_i
    let key_proj = store.value(dec.att_key);
    for i in 0..n {
        let dk = d_keys.row(i).to_vec();
        outer_acc(grads.get_mut(dec.att_key), &dk, encoded.annotations.row(i));
        matvec_t_acc(key_proj, &dk, d_annotations.row_mut(i));
    }

    // s0 = tanh(W mean(H) + b)
    let d_pre: Vec<f64> = ds_next.iter().zip(&s0).map(|(g, s)| g * (1.0 - s * s)).collect();
    let mean = encoded.annotations.mean();
    outer_acc(grads.get_mut(dec.init_weight), &d_pre, &mean);
    crate::math::tensor::axpy(1.0, &d_pre, grads.get_mut(dec.init_bias).data_mut());
    let mut d_mean = vec![0.0; mean.len()];
    matvec_t_acc(store.value(dec.init_weight), &d_pre, &mut d_mean);
    let inv = 1.0 / n as f64;
    for i in 0..n {
        crate::math::tensor::axpy(inv, &d_mean, d_annotations.row_mut(i));
    }
    loss
}

#[allow(clippy::too_many_arguments)]
fn attention_backward(
    params: &ModelParameters,
    direction: Direction,
    encoded: &EncodedSource,
    cache: &StepCache,
    dc: &[f64],
    grads: &mut Gradients,
    d_annotations: &mut Tensor,
    d_keys: &mut Tensor,
    ds_prev: &mut [f64],
) {
    let store = &params.store;
    let dec = params.layout.decoder(direction);
    let weights = &cache.attention.weights;
    let n = weights.len();

    let mut d_weights = vec![0.0; n];
    for i in 0..n {
        let h = encoded.annotations.row(i);
        d_weights[i] = crate::math::tensor::dot(dc, h);
        crate::math::tensor::axpy(weights[i], dc, d_annotations.row_mut(i));
    }
    let weighted: f64 = weights.iter().zip(&d_weights).map(|(a, d)| a * d).sum();
    let score = store.value(dec.att_score).data();
    let mut d_query_proj = vec![0.0; score.len()];
    for i in 0..n {
        let de = weights[i] * (d_weights[i] - weighted);
        if de == 0.0 {
            continue;
        }
        let a = &cache.attention.hidden[i];
        crate::math::tensor::axpy(de, a, grads.get_mut(dec.att_score).data_mut());
        let dk = d_keys.row_mut(i);
        for k in 0..a.len() {
            let d_pre = de * score[k] * (1.0 - a[k] * a[k]);
            dk[k] += d_pre;
            d_query_proj[k] += d_pre;
        }
    }
    outer_acc(grads.get_mut(dec.att_query), &d_query_proj, &cache.query);
    matvec_t_acc(store.value(dec.att_query), &d_query_proj, ds_prev);
}

fn encoder_backward(
    params: &ModelParameters,
    source: &[TokenId],
    cache: &super::network::EncoderCache,
    d_annotations: &Tensor,
    grads: &mut Gradients,
) {
    let store = &params.store;
    let he = params.config.encoder_hidden;
    let e = params.config.embedding;
    let n = source.len();
    let emb_id = params.layout.source_embedding;

    let mut dh = vec![0.0; he];
    for i in (0..n).rev() {
        crate::math::tensor::axpy(1.0, &d_annotations.row(i)[..he], &mut dh);
        let mut dx = vec![0.0; e];
        let mut dh_prev = vec![0.0; he];
        gru_backward(store, &params.layout.encoder[0], &cache.forward[i], &dh, grads, &mut dx, &mut dh_prev);
        crate::math::tensor::axpy(1.0, &dx, grads.get_mut(emb_id).row_mut(source[i].index()));
        dh = dh_prev;
    }
    let mut dh = vec![0.0; he];
    for i in 0..n {
        crate::math::tensor::axpy(1.0, &d_annotations.row(i)[he..], &mut dh);
        let mut dx = vec![0.0; e];
        let mut dh_prev = vec![0.0; he];
        gru_backward(store, &params.layout.encoder[1], &cache.backward[i], &dh, grads, &mut dx, &mut dh_prev);
        crate::math::tensor::axpy(1.0, &dx, grads.get_mut(emb_id).row_mut(source[i].index()));
        dh = dh_prev;
    }
}

fn loss_impl(
    params: &ModelParameters,
    source: &[TokenId],
    target: &[TokenId],
    directions: &[Direction],
    grads: Option<&mut Gradients>,
) -> Result<[f64; 2]> {
    check_target(params, target)?;
    let (annotations, enc_cache) = encode_with_cache(params, source)?;
    let encoded = prepare(params, source.to_vec(), annotations);
    let mut losses = [0.0; 2];
    match grads {
        None => {
            for d in directions {
                losses[d.index()] = decoder_pass(params, *d, &encoded, target, None);
            }
        }
        Some(grads) => {
            let mut d_annotations = Tensor::zeros(&[source.len(), params.config.annotation_dim()]);
            for d in directions {
                losses[d.index()] =
                    decoder_pass(params, *d, &encoded, target, Some((grads, &mut d_annotations)));
            }
            encoder_backward(params, source, &enc_cache, &d_annotations, grads);
        }
    }
    for l in losses {
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss = {l}")));
        }
    }
    Ok(losses)
}

/// Joint objective `−(L_L + L_R)`. When `grads` is given, the gradient of the
/// total is accumulated into it.
pub fn joint_loss(
    params: &ModelParameters,
    source: &[TokenId],
    target: &[TokenId],
    grads: Option<&mut Gradients>,
) -> Result<LossBreakdown> {
    let [forward, backward] = loss_impl(
        params,
        source,
        target,
        &[Direction::Forward, Direction::Backward],
        grads,
    )?;
    Ok(LossBreakdown {
        forward,
        backward,
        total: forward + backward,
    })
}

/// Loss of a single decoder.
pub fn direction_loss(
    params: &ModelParameters,
    direction: Direction,
    source: &[TokenId],
    target: &[TokenId],
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let losses = loss_impl(params, source, target, &[direction], grads)?;
    Ok(losses[direction.index()])
}
