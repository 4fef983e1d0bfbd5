mod common;

use nis::checkpoint::Checkpoint;
use nis::datagen::{gen_markov, gen_spring, MarkovParams, SpringParams};
use nis::ei::ei_of_checkpoint;
use nis::ei::EiConfig;
use nis::rng::stream;
use nis::squeezer::{
    baseline_train, split_rows, train, DecodeNoise, ModelConfig, NisModel, Norm, TrainConfig,
};
use nis::NisError;
use proptest::prelude::*;

fn small_arch() -> ModelConfig {
    ModelConfig { hidden: 16, blocks: 3 }
}

fn scrambled(p: usize, q: usize, seed: u64) -> NisModel {
    let mut m = NisModel::new(p, q, small_arch(), Norm::L2, seed).unwrap();
    m.bijector_mut().randomize(0.3, &mut stream(seed, "tests/scramble"));
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn encode_inverts_decode(
        p in 2usize..8,
        q_frac in 0.0f64..1.0,
        seed in any::<u64>(),
        vals in prop::collection::vec(-3.0f64..3.0, 16),
    ) {
        let q = 1 + ((p - 1) as f64 * q_frac) as usize;
        let m = scrambled(p, q, seed);
        let (y, z) = (&vals[..q], &vals[8..8 + p - q]);
        let x = m.decode(y, z).unwrap();
        let back = m.encode(&x).unwrap();
        for (a, b) in y.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        let dropped = m.dropped(&x).unwrap();
        for (a, b) in z.iter().zip(&dropped) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn split_is_a_partition(n in 10usize..500, frac in 0.05f64..0.5, seed in any::<u64>()) {
        let (train_rows, val_rows) = split_rows(n, frac, seed).unwrap();
        let mut all: Vec<usize> = train_rows.iter().chain(&val_rows).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(!val_rows.is_empty() && !train_rows.is_empty());
    }
}

#[test]
fn batch_and_single_paths_agree() {
    let m = scrambled(4, 2, 5);
    let x = [0.3, -1.0, 0.8, 2.0];
    let y = m.encode(&x).unwrap();
    let yb = m.encode_batch(&nis::Tensor::matrix(1, 4, x.to_vec())).unwrap();
    assert_eq!(yb.data(), &y[..]);
    let step = m.macro_step(&y).unwrap();
    let sb = m.macro_step_batch(&yb).unwrap();
    assert_eq!(sb.data(), &step[..]);
    let pred = m.predict_micro(&x, DecodeNoise::Zero).unwrap();
    assert_eq!(pred, m.decode(&step, &[0.0, 0.0]).unwrap());
}

#[test]
fn sampled_decoding_is_seeded() {
    let m = scrambled(5, 2, 1);
    let x = [0.1, 0.2, 0.3, 0.4, 0.5];
    let a = m.predict_micro(&x, DecodeNoise::Sampled { seed: 3 }).unwrap();
    let b = m.predict_micro(&x, DecodeNoise::Sampled { seed: 3 }).unwrap();
    let c = m.predict_micro(&x, DecodeNoise::Sampled { seed: 4 }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    // The macro part is unaffected by the sampled latent.
    for (u, v) in m.encode(&a).unwrap().iter().zip(m.encode(&c).unwrap()) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn rollout_has_steps_plus_one_states() {
    let m = scrambled(4, 2, 2);
    let r = m.rollout(&[0.5, 0.5, -0.5, 0.1], 12, DecodeNoise::Zero).unwrap();
    assert_eq!(r.macro_states.len(), 13);
    assert_eq!(r.micro_states.len(), 13);
    assert_eq!(r.micro_states[0], vec![0.5, 0.5, -0.5, 0.1]);
    for (y, x) in r.macro_states.iter().zip(&r.micro_states).skip(1) {
        let back = m.encode(x).unwrap();
        assert!(y.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
    }
    assert!(m.rollout(&[0.0; 4], 0, DecodeNoise::Zero).is_err());
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 32,
        seed,
        ..Default::default()
    }
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let data = gen_markov(&MarkovParams {
        batches: 800,
        ..Default::default()
    })
    .unwrap();
    let cfg = quick_config(3);
    let a = train(NisModel::new(8, 2, small_arch(), Norm::L2, 3).unwrap(), &data, &cfg).unwrap();
    let b = train(NisModel::new(8, 2, small_arch(), Norm::L2, 3).unwrap(), &data, &cfg).unwrap();
    let h = &a.outcome.history;
    assert_eq!(h.len(), 4);
    assert!(h.last().unwrap().best_val_loss < h[0].val_loss);
    assert_eq!(a.outcome.val_loss, h[a.outcome.best_epoch - 1].val_loss);
    assert_eq!(a.sigma2, b.sigma2);
    for (x, y) in a.model.params().iter().zip(b.model.params()) {
        assert_eq!(x.data(), y.data());
    }
    assert!(a.sigma2.iter().all(|s| s.is_finite() && *s >= 0.0));
}

#[test]
fn full_dimension_model_trains() {
    let data = gen_spring(&SpringParams {
        batches: 20,
        per_batch: 50,
        ..Default::default()
    })
    .unwrap();
    let trained = train(NisModel::new(4, 4, small_arch(), Norm::L1, 0).unwrap(), &data, &TrainConfig {
        norm: Norm::L1,
        ..quick_config(0)
    })
    .unwrap();
    assert_eq!(trained.sigma2.len(), 4);
    assert!(trained.outcome.val_loss.is_finite());
}

#[test]
fn objective_mismatch_and_dimension_errors() {
    let data = gen_markov(&MarkovParams {
        batches: 50,
        ..Default::default()
    })
    .unwrap();
    let l1 = NisModel::new(8, 1, small_arch(), Norm::L1, 0).unwrap();
    assert!(matches!(train(l1, &data, &quick_config(0)), Err(NisError::Config(_))));
    let wrong = NisModel::new(4, 1, small_arch(), Norm::L2, 0).unwrap();
    assert!(matches!(train(wrong, &data, &quick_config(0)), Err(NisError::Dimension { .. })));
    assert!(NisModel::new(4, 5, small_arch(), Norm::L2, 0).is_err());
    assert!(NisModel::new(4, 0, small_arch(), Norm::L2, 0).is_err());
    assert!(Norm::from_order(3).is_err());
}

#[test]
fn divergent_training_reports_numeric_failure() {
    let data = gen_spring(&SpringParams {
        batches: 10,
        per_batch: 50,
        amplitude: 1e150,
        ..Default::default()
    })
    .unwrap();
    let err = train(NisModel::new(4, 2, small_arch(), Norm::L2, 0).unwrap(), &data, &quick_config(0)).unwrap_err();
    assert!(matches!(err, NisError::NumericRange(_)), "{err}");
}

#[test]
fn baseline_matches_parameter_budget() {
    let data = gen_spring(&SpringParams {
        batches: 10,
        per_batch: 50,
        ..Default::default()
    })
    .unwrap();
    let model = NisModel::new(4, 2, ModelConfig::default(), Norm::L2, 0).unwrap();
    let budget = model.param_count();
    let (baseline, outcome) = baseline_train(&data, &quick_config(0), budget).unwrap();
    let diff = baseline.param_count().abs_diff(budget) as f64;
    assert!(diff <= 0.02 * budget as f64, "{} vs {budget}", baseline.param_count());
    assert!(outcome.val_loss.is_finite());
    assert!(baseline_train(&data, &quick_config(0), 3).is_err());
}

#[test]
fn checkpoint_file_round_trip_preserves_ei() {
    let data = gen_markov(&MarkovParams {
        batches: 300,
        ..Default::default()
    })
    .unwrap();
    let cfg = quick_config(1);
    let trained = train(NisModel::new(8, 2, small_arch(), Norm::L2, 1).unwrap(), &data, &cfg).unwrap();
    let ckpt = Checkpoint::from_trained(&trained, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ckpt.write(&path).unwrap();
    let back = Checkpoint::read(&path).unwrap();
    assert_eq!(back, ckpt);
    let ei = EiConfig {
        n_samples: 200,
        ..Default::default()
    };
    assert_eq!(ei_of_checkpoint(&back, &ei).unwrap(), ei_of_checkpoint(&ckpt, &ei).unwrap());
    let x = data.current(0);
    assert_eq!(back.to_model().unwrap().predict_micro(x, DecodeNoise::Zero).unwrap(),
        trained.model.predict_micro(x, DecodeNoise::Zero).unwrap());

    let untrained = Checkpoint::from_model(&trained.model, &cfg);
    assert!(matches!(ei_of_checkpoint(&untrained, &ei), Err(NisError::Config(_))));
}
