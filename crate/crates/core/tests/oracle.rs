use std::sync::Arc;

use imt_core::corpus::{generate, SyntheticSpec};
use imt_core::decoding::Strategy;
use imt_core::model::{ModelConfig, ModelParameters, TranslationModel, Vocab};
use imt_core::session::{Session, SessionConfig};
use imt_core::simulator::{
    align, candidate_revisions, critical_revision_oracle, evaluate_candidates, run_ideal_session, sentence_bleu_smoothed,
    Edit, SimulationConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SRC: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
const TGT: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

fn model(seed: u64) -> Arc<TranslationModel> {
    let params = ModelParameters::new(ModelConfig {
        source_vocab: SRC.len() + 4,
        target_vocab: TGT.len() + 4,
        embedding: 4,
        encoder_hidden: 3,
        decoder_hidden: 4,
        attention: 3,
        readout: 4,
        init_scale: 1.5,
        seed,
    })
    .unwrap();
    Arc::new(TranslationModel::new(params, Vocab::new(SRC), Vocab::new(TGT)).unwrap())
}

fn sentence(rng: &mut ChaCha8Rng, words: &[&str], len: std::ops::Range<usize>) -> Vec<String> {
    let n = rng.gen_range(len);
    (0..n).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
}

fn config(strategy: Strategy) -> SessionConfig {
    SessionConfig {
        strategy,
        use_memory: false,
        online_learning: false,
        ..SessionConfig::default()
    }
}

#[test]
fn chosen_revision_beats_every_other_candidate() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut chosen = 0;
    for seed in 0..40 {
        let strategy = Strategy::ALL[seed as usize % 3];
        let mut s = Session::open(model(seed), config(strategy)).unwrap();
        let source = sentence(&mut rng, &SRC, 2..6).join(" ");
        let refs = [sentence(&mut rng, &TGT, 2..7)];
        let round = s.translate(&source).unwrap().id;
        for _ in 0..3 {
            let all = evaluate_candidates(&s, round, &refs).unwrap();
            let Some(best) = critical_revision_oracle(&s, round, &refs).unwrap() else {
                assert!(all.is_empty());
                break;
            };
            chosen += 1;
            let before = sentence_bleu_smoothed(&s.render_tokens(&s.round(round).unwrap().current), &refs);
            assert!(best.bleu > before);
            assert!(all.iter().all(|c| c.bleu <= best.bleu));
            let after = s.revise(round, best.position, &best.surface, best.insert).unwrap();
            assert_eq!(after.current, best.tokens);
        }
    }
    assert!(chosen > 20, "{chosen}");
}

#[test]
fn left_to_right_candidates_are_the_first_error_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let hyp = sentence(&mut rng, &TGT, 1..7);
        let reference = sentence(&mut rng, &TGT, 1..7);
        let uni = candidate_revisions(&hyp, &[reference.clone()], Strategy::UniDir);
        let everywhere = candidate_revisions(&hyp, &[reference.clone()], Strategy::BiDir);
        assert!(uni.len() <= 1);
        assert!(uni.iter().all(|c| everywhere.contains(c)));
        let first = align(&hyp, &reference).into_iter().find(|e| !e.is_match());
        match first {
            Some(Edit::Substitute { hyp: h, .. }) => assert_eq!(uni[0].0, h),
            Some(Edit::Insert { before, .. }) => assert_eq!(uni[0].0, before),
            _ => assert!(uni.is_empty()),
        }
    }
}

#[test]
fn simulation_is_monotone_and_budget_zero_is_plain_decoding() {
    let spec = SyntheticSpec {
        source_words: 6,
        ambiguous_words: 0,
        registers: 1,
        train_sessions: 1,
        test_sessions: 3,
        sentences_per_session: 3,
        rare_words: 0,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec).unwrap();
    let words: Vec<String> = data.lexicon.source_words().map(String::from).collect();
    let targets: Vec<String> = data.test.pairs.iter().flat_map(|p| p.target.clone()).collect();
    let mut tv: Vec<String> = targets.clone();
    tv.sort();
    tv.dedup();
    tv.truncate(8);
    let (sv, tv) = (Vocab::new(&words), Vocab::new(&tv));
    let params = ModelParameters::new(ModelConfig {
        source_vocab: sv.len(),
        target_vocab: tv.len(),
        embedding: 4,
        encoder_hidden: 3,
        decoder_hidden: 4,
        attention: 3,
        readout: 4,
        init_scale: 1.0,
        seed: 2,
    })
    .unwrap();
    let m = Arc::new(TranslationModel::new(params, sv, tv).unwrap());
    for strategy in Strategy::ALL {
        let metrics = run_ideal_session(
            m.clone(),
            &data.test,
            &SimulationConfig {
                strategy,
                use_memory: false,
                online_learning: false,
                ..SimulationConfig::default()
            },
        )
        .unwrap();
        assert!(metrics.bleu.windows(2).all(|w| w[1] >= w[0]), "{strategy}: {:?}", metrics.bleu);
        let mut plain = Session::open(m.clone(), config(strategy)).unwrap();
        for (pair, outcome) in data.test.pairs.iter().zip(&metrics.sentences) {
            let tokens = plain.translate(&pair.source.join(" ")).unwrap().current.clone();
            assert_eq!(plain.render_tokens(&tokens), outcome.outputs[0]);
        }
    }
}
