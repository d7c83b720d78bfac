use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::joint_loss;
use super::network::{encode_source, start_state, decoder_step};
use super::params::{Direction, ModelConfig, ModelParameters};
use super::vocab::TokenId;
use crate::error::{Error, Result};
use crate::math::tensor::argmax;
use crate::math::{adam_step, Gradients};

/// A tokenized sentence pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl Pair {
    pub fn new(source: Vec<TokenId>, target: Vec<TokenId>) -> Self {
        Self { source, target }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 20,
            learning_rate: 0.01,
            clip_norm: Some(5.0),
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One point of the training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub step: usize,
    /// Mean joint loss over the batch.
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
    /// Mean joint loss per epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainingCurve {
    /// Tab-separated `epoch step loss` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tstep\tloss\n");
        for p in &self.points {
            out.push_str(&format!("{}\t{}\t{:.6}\n", p.epoch, p.step, p.loss));
        }
        out
    }
}

/// Trains fresh parameters built from `model`.
pub fn train(model: ModelConfig, pairs: &[Pair], config: &TrainConfig) -> Result<(ModelParameters, TrainingCurve)> {
    let mut params = ModelParameters::new(model)?;
    let curve = train_in_place(&mut params, pairs, config)?;
    Ok((params, curve))
}

/// Continues training `params` on `pairs`.
pub fn train_in_place(params: &mut ModelParameters, pairs: &[Pair], config: &TrainConfig) -> Result<TrainingCurve> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut curve = TrainingCurve::default();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = params.store.zero_gradients();
            let mut total = 0.0;
            for &i in batch {
                let pair = &pairs[i];
                total += joint_loss(params, &pair.source, &pair.target, Some(&mut grads))?.total;
            }
            let loss = total / batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            grads.scale(1.0 / batch.len() as f64);
            apply(params, grads, config.learning_rate, config.clip_norm);
            curve.points.push(CurvePoint { epoch, step, loss });
            epoch_total += total;
            step += 1;
        }
        let mean = epoch_total / pairs.len() as f64;
        log::debug!("epoch {epoch}: mean joint loss {mean:.4}");
        curve.epoch_loss.push(mean);
    }
    Ok(curve)
}

/// One Adam update with optional global-norm clipping.
pub fn apply(params: &mut ModelParameters, mut grads: Gradients, learning_rate: f64, clip_norm: Option<f64>) {
    if let Some(max) = clip_norm {
        let norm = grads.global_norm();
        if norm > max {
            grads.scale(max / norm);
        }
    }
    *params.store.grads_mut() = grads;
    adam_step(&mut params.store, learning_rate);
}

/// Teacher-forced per-token accuracy of one decoder (terminal included).
pub fn token_accuracy(params: &ModelParameters, direction: Direction, pairs: &[Pair]) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for pair in pairs {
        let encoded = encode_source(params, &pair.source)?;
        let mut gold: Vec<TokenId> = pair.target.clone();
        if direction == Direction::Backward {
            gold.reverse();
        }
        gold.push(direction.terminal_token());
        let mut state = start_state(params, direction, &encoded);
        for (k, g) in gold.iter().enumerate() {
            if argmax(&state.logits) == g.index() {
                correct += 1;
            }
            total += 1;
            if k + 1 < gold.len() {
                state = decoder_step(params, direction, &encoded, &state, *g)?;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("evaluation pairs"));
    }
    Ok(correct as f64 / total as f64)
}
