//! Session-scoped key-value memory of revisions, read through a copy
//! distribution and mixed into the forward decoder's output by a gate.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::math::tensor::{argmax, dot};
use crate::math::{adam_step, sigmoid, Gradients, ParamStore};
use crate::model::{
    decoder_step, encode_source, start_state, DecoderState, Direction, GateParams, ModelParameters,
    TokenId, TranslationModel, UNK,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    pub capacity: usize,
    /// Reads start once more than this many revisions have been made.
    pub threshold: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            capacity: 100,
            threshold: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryItem {
    /// Decoder state `s'` at the revised position.
    pub key_state: Vec<f64>,
    /// Context vector `c'` at the revised position.
    pub key_context: Vec<f64>,
    /// Vocabulary id of the revised word, UNK when out of vocabulary.
    pub token: TokenId,
    pub surface: String,
    pub index: u64,
}

impl MemoryItem {
    fn is_oov(&self) -> bool {
        self.token == UNK
    }
}

/// One line of [`RevisionMemory::dump`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryDumpEntry {
    pub surface: String,
    pub state_norm: f64,
    pub context_norm: f64,
    pub index: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionMemory {
    config: MemoryConfig,
    items: VecDeque<MemoryItem>,
    revisions: u64,
    next_index: u64,
}

impl RevisionMemory {
    pub fn new(config: MemoryConfig) -> Self {
        Self {
            config,
            items: VecDeque::new(),
            revisions: 0,
            next_index: 0,
        }
    }

    pub fn config(&self) -> MemoryConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl ExactSizeIterator<Item = &MemoryItem> {
        self.items.iter()
    }

    /// Revisions seen so far, including ones that stored nothing.
    pub fn revisions(&self) -> u64 {
        self.revisions
    }

    /// Counts a revision and stores its context, evicting the oldest items
    /// beyond capacity.
    pub fn write(&mut self, key_state: Vec<f64>, key_context: Vec<f64>, token: TokenId, surface: &str) -> Result<()> {
        if surface.is_empty() {
            return Err(Error::Contract("memory values need a surface form".into()));
        }
        if let Some(first) = self.items.front() {
            if first.key_state.len() != key_state.len() || first.key_context.len() != key_context.len() {
                return Err(Error::Dimension("memory key size changed".into()));
            }
        }
        self.revisions += 1;
        self.items.push_back(MemoryItem {
            key_state,
            key_context,
            token,
            surface: surface.to_string(),
            index: self.next_index,
        });
        self.next_index += 1;
        while self.items.len() > self.config.capacity {
            self.items.pop_front();
        }
        Ok(())
    }

    /// Counts a revision that has no value to store (a deletion).
    pub fn note_revision(&mut self) {
        self.revisions += 1;
    }

    pub fn is_active(&self) -> bool {
        self.revisions > self.config.threshold && !self.items.is_empty()
    }

    /// Copy distribution over the items, oldest first.
    pub fn read(&self, params: &ModelParameters, state: &[f64], context: &[f64]) -> Result<Vec<f64>> {
        if self.items.is_empty() {
            return Err(Error::Empty("revision memory"));
        }
        let gate = gate_weights(params);
        Ok(copy_distribution(&gate, self.items.iter(), state, context))
    }

    pub fn dump(&self) -> Vec<MemoryDumpEntry> {
        self.items
            .iter()
            .map(|i| MemoryDumpEntry {
                surface: i.surface.clone(),
                state_norm: dot(&i.key_state, &i.key_state).sqrt(),
                context_norm: dot(&i.key_context, &i.key_context).sqrt(),
                index: i.index,
            })
            .collect()
    }
}

struct GateWeights<'a> {
    w1: f64,
    w2: f64,
    ws: &'a [f64],
    wc: &'a [f64],
}

fn gate_weights_from<'a>(store: &'a ParamStore, gate: &GateParams) -> GateWeights<'a> {
    GateWeights {
        w1: store.value(gate.state_similarity).data()[0],
        w2: store.value(gate.context_similarity).data()[0],
        ws: store.value(gate.state).data(),
        wc: store.value(gate.context).data(),
    }
}

fn gate_weights(params: &ModelParameters) -> GateWeights<'_> {
    gate_weights_from(&params.store, &params.layout.gate)
}

fn similarities(item: &MemoryItem, state: &[f64], context: &[f64]) -> (f64, f64) {
    (
        dot(state, &item.key_state).abs(),
        dot(context, &item.key_context).abs(),
    )
}

fn copy_distribution<'a>(
    g: &GateWeights,
    items: impl Iterator<Item = &'a MemoryItem>,
    state: &[f64],
    context: &[f64],
) -> Vec<f64> {
    let mut r: Vec<f64> = items
        .map(|item| {
            let (a, b) = similarities(item, state, context);
            g.w1 * a + g.w2 * b
        })
        .collect();
    crate::math::activation::softmax_in_place(&mut r);
    r
}

fn gate_value(g: &GateWeights, state: &[f64], context: &[f64]) -> f64 {
    sigmoid(dot(g.ws, state) + dot(g.wc, context))
}

/// `θ = sigmoid(W_s·s + W_c·c)`.
pub fn copy_gate(params: &ModelParameters, state: &[f64], context: &[f64]) -> f64 {
    gate_value(&gate_weights(params), state, context)
}

/// Model distribution with copy mass folded in.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedDistribution {
    pub theta: f64,
    /// Mixed probability per vocabulary id.
    pub vocab: Vec<f64>,
    /// Part of `vocab` that came from copying.
    pub copied: Vec<f64>,
    /// Copy-only outcomes for out-of-vocabulary values, by first occurrence.
    pub oov: Vec<(String, f64)>,
}

impl MixedDistribution {
    /// The plain model distribution.
    pub fn model_only(probs: Vec<f64>) -> Self {
        let n = probs.len();
        Self {
            theta: 0.0,
            vocab: probs,
            copied: vec![0.0; n],
            oov: Vec::new(),
        }
    }

    pub fn total(&self) -> f64 {
        self.vocab.iter().sum::<f64>() + self.oov.iter().map(|(_, p)| p).sum::<f64>()
    }

    pub fn oov_probability(&self, surface: &str) -> f64 {
        self.oov
            .iter()
            .find(|(s, _)| s == surface)
            .map_or(0.0, |(_, p)| *p)
    }

    /// Probability used when a pinned token is placed: for an unknown word
    /// typed by a human, the UNK mass plus its own copy mass.
    pub fn constraint_probability(&self, id: TokenId, surface: Option<&str>) -> f64 {
        match surface {
            Some(s) if id == UNK => self.vocab[UNK.index()] + self.oov_probability(s),
            _ => self.vocab[id.index()],
        }
    }

    /// Whether more of `id`'s mass came from copying than from the model.
    pub fn is_copy(&self, id: TokenId) -> bool {
        let c = self.copied[id.index()];
        c > self.vocab[id.index()] - c
    }
}

/// `(1−θ)·P + θ·r`, with in-vocabulary values merged into their ids and
/// unknown values kept as separate outcomes.
pub fn mix<'a>(
    model: &[f64],
    copy: &[f64],
    theta: f64,
    items: impl IntoIterator<Item = &'a MemoryItem>,
) -> MixedDistribution {
    let mut vocab: Vec<f64> = model.iter().map(|p| (1.0 - theta) * p).collect();
    let mut copied = vec![0.0; model.len()];
    let mut oov: Vec<(String, f64)> = Vec::new();
    for (item, r) in items.into_iter().zip(copy) {
        let mass = theta * r;
        if item.is_oov() {
            match oov.iter_mut().find(|(s, _)| *s == item.surface) {
                Some((_, p)) => *p += mass,
                None => oov.push((item.surface.clone(), mass)),
            }
        } else {
            vocab[item.token.index()] += mass;
            copied[item.token.index()] += mass;
        }
    }
    MixedDistribution {
        theta,
        vocab,
        copied,
        oov,
    }
}

/// Output distribution for one decoder state. Memory only affects the
/// forward decoder, and only while active.
pub fn step_distribution(
    params: &ModelParameters,
    memory: Option<&RevisionMemory>,
    state: &DecoderState,
) -> MixedDistribution {
    let probs = state.probabilities();
    match memory {
        Some(m) if m.is_active() && state.direction == Direction::Forward => {
            let g = gate_weights(params);
            let r = copy_distribution(&g, m.items(), &state.state, &state.context);
            let theta = gate_value(&g, &state.state, &state.context);
            mix(&probs, &r, theta, m.items())
        }
        _ => MixedDistribution::model_only(probs),
    }
}

/// Reference word at one step of memory training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gold {
    Vocab(TokenId),
    Oov(String),
}

impl Gold {
    /// Model-side probability and the memory items that produce this word.
    /// An unknown word that is not in memory can only come out as UNK.
    fn target(&self, model: &[f64], items: &[MemoryItem]) -> (f64, Vec<bool>) {
        match self {
            Gold::Vocab(id) => (
                model[id.index()],
                items.iter().map(|i| !i.is_oov() && i.token == *id).collect(),
            ),
            Gold::Oov(s) => {
                let mask: Vec<bool> = items.iter().map(|i| i.is_oov() && i.surface == *s).collect();
                if mask.iter().any(|m| *m) {
                    (0.0, mask)
                } else {
                    (model[UNK.index()], mask)
                }
            }
        }
    }
}

#[derive(Default)]
struct GateGradient {
    w1: f64,
    w2: f64,
    ws: Vec<f64>,
    wc: Vec<f64>,
}

fn mixed_nll_core(
    g: &GateWeights,
    items: &[MemoryItem],
    state: &[f64],
    context: &[f64],
    model: &[f64],
    gold: &Gold,
    grad: Option<&mut GateGradient>,
) -> f64 {
    let (base, mask) = gold.target(model, items);
    if items.is_empty() {
        return -base.ln();
    }
    let r = copy_distribution(g, items.iter(), state, context);
    let theta = gate_value(g, state, context);
    let big_r: f64 = r.iter().zip(&mask).filter(|(_, m)| **m).map(|(x, _)| x).sum();
    let p = (1.0 - theta) * base + theta * big_r;
    if let Some(grad) = grad {
        let d_theta = -(big_r - base) / p;
        let da = d_theta * theta * (1.0 - theta);
        crate::math::tensor::axpy(da, state, &mut grad.ws);
        crate::math::tensor::axpy(da, context, &mut grad.wc);
        for (t, item) in items.iter().enumerate() {
            let indicator = if mask[t] { 1.0 } else { 0.0 };
            let de = -(theta / p) * r[t] * (indicator - big_r);
            let (a, b) = similarities(item, state, context);
            grad.w1 += de * a;
            grad.w2 += de * b;
        }
    }
    -p.ln()
}

/// `−log P_mixed(gold)` at one decoder state for the given memory contents,
/// accumulating the gradient w.r.t. the gate weights into `grads`.
pub fn mixed_loss(
    params: &ModelParameters,
    items: &[MemoryItem],
    state: &DecoderState,
    gold: &Gold,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    if let Gold::Vocab(id) = gold {
        if id.index() >= params.config.target_vocab {
            return Err(Error::InvalidToken {
                id: id.0,
                size: params.config.target_vocab,
            });
        }
    }
    let g = gate_weights(params);
    let model = state.probabilities();
    let mut acc = GateGradient {
        ws: vec![0.0; g.ws.len()],
        wc: vec![0.0; g.wc.len()],
        ..GateGradient::default()
    };
    let want = grads.is_some();
    let loss = mixed_nll_core(&g, items, &state.state, &state.context, &model, gold, want.then_some(&mut acc));
    if let Some(grads) = grads {
        let gate = params.layout.gate;
        grads.get_mut(gate.state_similarity).data_mut()[0] += acc.w1;
        grads.get_mut(gate.context_similarity).data_mut()[0] += acc.w2;
        crate::math::tensor::axpy(1.0, &acc.ws, grads.get_mut(gate.state).data_mut());
        crate::math::tensor::axpy(1.0, &acc.wc, grads.get_mut(gate.context).data_mut());
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("mixed loss = {loss}")));
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Share of correctly predicted in-vocabulary steps also written to the
    /// scratch memory; unknown and mispredicted words are always written.
    pub sample_rate: f64,
    pub capacity: usize,
    pub seed: u64,
}

impl Default for MemoryTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            learning_rate: 0.02,
            sample_rate: 0.1,
            capacity: 100,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryTrainReport {
    /// Steps with a non-empty scratch memory.
    pub steps: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    /// Mean gate value after training on steps whose gold word is in memory.
    pub gate_when_present: f64,
    /// Mean gate value after training on the remaining steps.
    pub gate_when_absent: f64,
}

struct ScratchStep {
    state: Vec<f64>,
    context: Vec<f64>,
    model: Vec<f64>,
    gold: Gold,
    session: usize,
    window: std::ops::Range<usize>,
}

/// Fits `W_1, W_2, W_s, W_c` on teacher-forced sessions with the rest of the
/// model frozen. Within each session, earlier steps populate a scratch memory
/// that later steps read from.
pub fn train_memory_params(
    model: &mut TranslationModel,
    corpus: &ParallelCorpus,
    config: &MemoryTrainConfig,
) -> Result<MemoryTrainReport> {
    corpus.validate()?;
    if config.capacity == 0 || config.epochs == 0 {
        return Err(Error::Config("memory training needs capacity and epochs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = &model.params;
    let mut sessions: Vec<Vec<MemoryItem>> = Vec::new();
    let mut steps: Vec<ScratchStep> = Vec::new();
    for pairs in corpus.session_pairs() {
        let session = sessions.len();
        let mut items: Vec<MemoryItem> = Vec::new();
        for pair in pairs {
            let source = model.source_vocab.encode(&pair.source);
            let target = model.target_vocab.encode(&pair.target);
            let encoded = encode_source(params, &source)?;
            let mut state = start_state(params, Direction::Forward, &encoded);
            for (k, (id, surface)) in target.iter().zip(&pair.target).enumerate() {
                let gold = if *id == UNK {
                    Gold::Oov(surface.clone())
                } else {
                    Gold::Vocab(*id)
                };
                let probs = state.probabilities();
                let lo = items.len().saturating_sub(config.capacity);
                if items.len() > lo {
                    steps.push(ScratchStep {
                        state: state.state.clone(),
                        context: state.context.clone(),
                        model: probs.clone(),
                        gold: gold.clone(),
                        session,
                        window: lo..items.len(),
                    });
                }
                let predicted = argmax(&probs);
                if *id == UNK || predicted != id.index() || rng.gen_bool(config.sample_rate) {
                    items.push(MemoryItem {
                        key_state: state.state.clone(),
                        key_context: state.context.clone(),
                        token: *id,
                        surface: surface.clone(),
                        index: items.len() as u64,
                    });
                }
                if k + 1 < target.len() {
                    state = decoder_step(params, Direction::Forward, &encoded, &state, *id)?;
                }
            }
        }
        sessions.push(items);
    }
    if steps.is_empty() {
        return Err(Error::Empty("memory training steps"));
    }

    let gate = params.layout.gate;
    let mut store = ParamStore::new();
    let ids = gate.ids().map(|id| store.add(params.store.name(id), params.store.value(id).clone()));
    let local = GateParams {
        state_similarity: ids[0],
        context_similarity: ids[1],
        state: ids[2],
        context: ids[3],
    };
    let evaluate = |store: &ParamStore, grads: Option<&mut Gradients>| -> f64 {
        let g = gate_weights_from(store, &local);
        let mut acc = GateGradient {
            ws: vec![0.0; g.ws.len()],
            wc: vec![0.0; g.wc.len()],
            ..GateGradient::default()
        };
        let want = grads.is_some();
        let mut total = 0.0;
        for step in &steps {
            let items = &sessions[step.session][step.window.clone()];
            total += mixed_nll_core(
                &g,
                items,
                &step.state,
                &step.context,
                &step.model,
                &step.gold,
                want.then_some(&mut acc),
            );
        }
        let n = steps.len() as f64;
        if let Some(grads) = grads {
            grads.get_mut(local.state_similarity).data_mut()[0] += acc.w1 / n;
            grads.get_mut(local.context_similarity).data_mut()[0] += acc.w2 / n;
            crate::math::tensor::axpy(1.0 / n, &acc.ws, grads.get_mut(local.state).data_mut());
            crate::math::tensor::axpy(1.0 / n, &acc.wc, grads.get_mut(local.context).data_mut());
        }
        total / n
    };

    let loss_before = evaluate(&store, None);
    for epoch in 0..config.epochs {
        let mut grads = store.zero_gradients();
        let loss = evaluate(&store, Some(&mut grads));
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, step: epoch, loss });
        }
        *store.grads_mut() = grads;
        adam_step(&mut store, config.learning_rate);
    }
    let loss_after = evaluate(&store, None);

    let g = gate_weights_from(&store, &local);
    let (mut present, mut absent) = ((0.0, 0usize), (0.0, 0usize));
    for step in &steps {
        let items = &sessions[step.session][step.window.clone()];
        let theta = gate_value(&g, &step.state, &step.context);
        let (_, mask) = step.gold.target(&step.model, items);
        if mask.iter().any(|m| *m) {
            present.0 += theta;
            present.1 += 1;
        } else {
            absent.0 += theta;
            absent.1 += 1;
        }
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { f64::NAN } else { s / n as f64 };

    for (target, id) in gate.ids().iter().zip(ids) {
        *model.params.store.value_mut(*target) = store.value(id).clone();
    }
    Ok(MemoryTrainReport {
        steps: steps.len(),
        loss_before,
        loss_after,
        gate_when_present: mean(present),
        gate_when_absent: mean(absent),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::grad_check;
    use crate::model::ModelConfig;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn item(state: Vec<f64>, context: Vec<f64>, token: u32, surface: &str) -> MemoryItem {
        MemoryItem {
            key_state: state,
            key_context: context,
            token: TokenId(token),
            surface: surface.into(),
            index: 0,
        }
    }

    fn tiny(seed: u64) -> ModelParameters {
        ModelParameters::new(ModelConfig {
            source_vocab: 7,
            target_vocab: 8,
            embedding: 3,
            encoder_hidden: 2,
            decoder_hidden: 3,
            attention: 2,
            readout: 3,
            init_scale: 1.0,
            seed,
        })
        .unwrap()
    }

    fn set_gate(p: &mut ModelParameters, w1: f64, w2: f64) {
        let g = p.layout.gate;
        p.store.value_mut(g.state_similarity).data_mut()[0] = w1;
        p.store.value_mut(g.context_similarity).data_mut()[0] = w2;
        p.store.value_mut(g.state).fill(0.0);
        p.store.value_mut(g.context).fill(0.0);
    }

    #[test]
    fn write_and_evict_in_fifo_order() {
        let mut m = RevisionMemory::new(MemoryConfig {
            capacity: 100,
            threshold: 20,
        });
        m.write(vec![0.0], vec![0.0], TokenId(4), "first").unwrap();
        assert_eq!(m.len(), 1);
        for i in 1..101 {
            m.write(vec![0.0], vec![0.0], TokenId(4), &format!("w{i}")).unwrap();
        }
        assert_eq!(m.len(), 100);
        assert!(m.items().all(|i| i.surface != "first"));
        let order: Vec<u64> = m.items().map(|i| i.index).collect();
        assert_eq!(order, (1..101).collect::<Vec<_>>());
        assert!(m.write(vec![0.0], vec![0.0], TokenId(4), "").is_err());
        assert!(m.write(vec![0.0, 1.0], vec![0.0], TokenId(4), "x").is_err());
    }

    #[test]
    fn activation_threshold() {
        let mut m = RevisionMemory::new(MemoryConfig {
            capacity: 5,
            threshold: 1,
        });
        m.note_revision();
        assert!(!m.is_active());
        m.write(vec![1.0], vec![1.0], TokenId(4), "a").unwrap();
        assert!(m.is_active());
        assert_eq!(m.revisions(), 2);
        let dump = m.dump();
        assert_eq!(dump[0].surface, "a");
        assert_eq!(dump[0].state_norm, 1.0);
    }

    #[test]
    fn read_examples() {
        let mut p = tiny(1);
        set_gate(&mut p, 1.0, 0.0);
        let mut m = RevisionMemory::new(MemoryConfig::default());
        let s = [1.0, 0.0, 0.0];
        let c = [0.0; 4];
        assert!(m.read(&p, &s, &c).is_err());
        m.write(vec![1.0, 0.0, 0.0], vec![0.0; 4], TokenId(4), "a").unwrap();
        assert_eq!(m.read(&p, &s, &c).unwrap(), vec![1.0]);
        m.write(vec![1.0, 0.0, 0.0], vec![0.0; 4], TokenId(5), "b").unwrap();
        assert_eq!(m.read(&p, &s, &c).unwrap(), vec![0.5, 0.5]);

        // |s·s'| = 1 and 2 (the second key has a negative dot product)
        let mut m = RevisionMemory::new(MemoryConfig::default());
        m.write(vec![1.0, 5.0, 0.0], vec![3.0; 4], TokenId(4), "a").unwrap();
        m.write(vec![-2.0, 0.0, 7.0], vec![1.0; 4], TokenId(5), "b").unwrap();
        let r = m.read(&p, &s, &[1.0; 4]).unwrap();
        assert!((r[0] - 0.26894).abs() < 1e-5 && (r[1] - 0.73106).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn gate_examples() {
        let mut p = tiny(2);
        set_gate(&mut p, 1.0, 1.0);
        assert_eq!(copy_gate(&p, &[3.0, -1.0, 2.0], &[1.0; 4]), 0.5);
    }

    #[test]
    fn mix_examples() {
        let it = [item(vec![], vec![], 0, "x")];
        let m = mix(&[0.6, 0.4], &[1.0], 0.5, &it);
        assert!((m.vocab[0] - 0.8).abs() < 1e-12 && (m.vocab[1] - 0.2).abs() < 1e-12);
        assert!(m.is_copy(TokenId(0)));
        assert!(!m.is_copy(TokenId(1)));
        let m = mix(&[0.6, 0.4], &[1.0], 0.0, &it);
        assert_eq!(m.vocab, vec![0.6, 0.4]);
        let m = mix(&[0.6, 0.4], &[1.0], 1.0, &it);
        assert_eq!(m.vocab, vec![1.0, 0.0]);
        assert!(m.is_copy(TokenId(0)));

        let oov = [item(vec![], vec![], UNK.0, "redford")];
        let m = mix(&[0.1, 0.2, 0.3, 0.4], &[1.0], 0.5, &oov);
        assert_eq!(m.oov, vec![("redford".to_string(), 0.5)]);
        assert!((m.constraint_probability(UNK, Some("redford")) - 0.7).abs() < 1e-12);
        assert!((m.total() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mixture_is_a_distribution(
            logits in prop::collection::vec(-5.0f64..5.0, 5),
            scores in prop::collection::vec(-5.0f64..5.0, 1..6),
            tokens in prop::collection::vec(0u32..6, 6),
            theta in 0.0f64..1.0,
        ) {
            let model = crate::math::softmax(&logits).unwrap();
            let r = crate::math::softmax(&scores).unwrap();
            let items: Vec<MemoryItem> = r
                .iter()
                .enumerate()
                .map(|(i, _)| {
                    let t = tokens[i];
                    let id = if t % 2 == 0 { 4 } else { UNK.0 };
                    item(vec![], vec![], id, &format!("w{t}"))
                })
                .collect();
            let m = mix(&model, &r, theta, &items);
            prop_assert!((m.total() - 1.0).abs() < 1e-9);
            prop_assert!(m.vocab.iter().all(|p| *p >= 0.0));
            prop_assert!(m.oov.iter().all(|(_, p)| *p >= 0.0));
        }

        #[test]
        fn fifo_never_exceeds_capacity(capacity in 1usize..10, writes in 0usize..40) {
            let mut m = RevisionMemory::new(MemoryConfig { capacity, threshold: 0 });
            for i in 0..writes {
                m.write(vec![0.0], vec![0.0], TokenId(4), &format!("w{i}")).unwrap();
                prop_assert!(m.len() <= capacity);
            }
            let kept: Vec<u64> = m.items().map(|i| i.index).collect();
            let start = writes.saturating_sub(capacity) as u64;
            prop_assert_eq!(kept, (start..writes as u64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn empty_memory_reduces_to_model_cross_entropy() {
        let p = tiny(3);
        let encoded = encode_source(&p, &[TokenId(4), TokenId(5)]).unwrap();
        let state = start_state(&p, Direction::Forward, &encoded);
        let mut grads = p.store.zero_gradients();
        let l = mixed_loss(&p, &[], &state, &Gold::Vocab(TokenId(6)), Some(&mut grads)).unwrap();
        assert!((l + state.probabilities()[6].ln()).abs() < 1e-12);
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn mixed_loss_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let mut p = tiny(seed);
            let encoded = encode_source(&p, &[TokenId(4), TokenId(6), TokenId(5)]).unwrap();
            let state = start_state(&p, Direction::Forward, &encoded);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let items: Vec<MemoryItem> = (0..4)
                .map(|k| {
                    let s: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let c: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    if k == 3 {
                        item(s, c, UNK.0, "redford")
                    } else {
                        item(s, c, 4 + (k % 2), "w")
                    }
                })
                .collect();
            for gold in [Gold::Vocab(TokenId(4)), Gold::Oov("redford".into()), Gold::Oov("nobody".into())] {
                let config = p.config.clone();
                let layout = p.layout;
                let gate_ids = layout.gate.ids();
                let report = grad_check(&mut p.store, Some(&gate_ids), 1e-5, |store, grads| {
                    let view = ModelParameters {
                        config: config.clone(),
                        store: store.clone(),
                        layout,
                    };
                    mixed_loss(&view, &items, &state, &gold, grads)
                })
                .unwrap();
                assert!(
                    report.max_relative_error < 1e-4,
                    "seed {seed} {gold:?}: {} at {:?}",
                    report.max_relative_error,
                    report.worst
                );
            }
        }
    }
}
