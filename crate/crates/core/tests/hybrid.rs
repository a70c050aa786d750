mod common;

use common::*;
use hybrid_fbf::hybrid::{
    build_lift_batch, build_lift_window, feature_vector, hybrid_recursion, HybridConfig,
    HybridModel, LiftScope,
};
use hybrid_fbf::oracle::ridge_weights;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn default_feature_length_and_zero_history() {
    let cfg = default_hybrid();
    assert_eq!(cfg.feature_len(), 55);
    let phi = feature_vector(&[0.0; 4], &[0.0; 50]);
    assert_eq!(phi.len(), 55);
    assert_eq!(phi[0], 1.0);
    assert!(phi.iter().skip(1).all(|v| *v == 0.0));
}

#[test]
fn two_step_prediction_by_hand() {
    // bias b, no prediction tap, one error tap a: e1 = b + a e0, e2 = b + a e1
    let (b, a, e0) = (0.2f64, 0.5f64, 1.0f64);
    let w = DVector::from_vec(vec![b, 0.0, a]);
    let (yh, est) = hybrid_recursion(&w, 1, 1, &[3.0, 4.0], 0, &[e0]);
    let e1 = b + a * e0;
    let e2 = b + a * e1;
    assert_eq!(est, vec![e1, e2]);
    assert_eq!(yh, vec![3.0 + e1, 4.0 + e2]);
}

#[test]
fn untrained_model_predicts_physics() {
    let model = HybridModel::new(default_hybrid()).unwrap();
    assert!(model.weights().iter().all(|w| *w == 0.0));
    let ypb: Vec<f64> = (0..210).map(|k| (k as f64 * 0.1).sin()).collect();
    assert_eq!(model.predict_batches(&ypb), ypb);
}

#[test]
fn single_bias_sample_gives_scalar_ridge() {
    let cfg = HybridConfig {
        q: 1,
        p: 1,
        lambda: 0.01,
        batch_length: 1,
    };
    let mut model = HybridModel::new(cfg).unwrap();
    let c = 2.5f64;
    model.train_update(&[0.0], &[c]).unwrap();
    let w = model.weights();
    assert!((w[0] - c / (1.0 + 0.01)).abs() < 1e-15);
    assert_eq!(w[1], 0.0);
    assert_eq!(w[2], 0.0);
}

#[test]
fn rls_tracks_batch_ridge_on_500_samples() {
    let cfg = HybridConfig {
        q: 4,
        p: 20,
        lambda: 0.01,
        batch_length: 50,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ypb = random_vec(&mut rng, 500);
    let e = random_vec(&mut rng, 500);
    let mut model = HybridModel::new(cfg).unwrap();
    for b in 0..10 {
        let r = b * 50..(b + 1) * 50;
        model.train_update(&ypb[r.clone()], &e[r]).unwrap();
        let end = (b + 1) * 50;
        let oracle = ridge_weights(&ypb[..end], &e[..end], 4, 20, 0.01).unwrap();
        let diff = (model.weights() - oracle).amax();
        assert!(diff <= 1e-8, "batch {b}: {diff:e}");
    }
    assert_eq!(model.samples(), 500);
}

#[test]
fn training_never_increases_the_ridge_objective() {
    let cfg = default_hybrid();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ypb: Vec<f64> = (0..700).map(|k| (k as f64 * 0.2).sin()).collect();
    let e: Vec<f64> = (0..700)
        .map(|k| 0.1 * (k as f64 * 0.2 - 0.3).sin() + rng.random_range(-0.01..0.01))
        .collect();
    let mut model = HybridModel::new(cfg).unwrap();
    for b in 0..10 {
        model
            .train_update(&ypb[b * 70..(b + 1) * 70], &e[b * 70..(b + 1) * 70])
            .unwrap();
    }
    let objective = |w: &DVector<f64>| {
        let mut j = cfg.lambda * w.norm_squared();
        for k in 0..700 {
            let yr: Vec<f64> = (0..4)
                .map(|i| {
                    let idx = k as isize - 3 + i;
                    if idx >= 0 { ypb[idx as usize] } else { 0.0 }
                })
                .collect();
            let er: Vec<f64> = (0..50)
                .map(|i| {
                    let idx = k as isize - 50 + i;
                    if idx >= 0 { e[idx as usize] } else { 0.0 }
                })
                .collect();
            let r = e[k] - w.dot(&feature_vector(&yr, &er));
            j += r * r;
        }
        j
    };
    let trained = objective(model.weights());
    let zero = objective(&DVector::zeros(55));
    assert!(trained <= zero, "{trained} > {zero}");
    assert!(trained < 0.1 * zero);
}

#[test]
fn two_batch_prediction_composes_single_batches() {
    let cfg = default_hybrid();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = HybridModel::new(cfg).unwrap();
    for _ in 0..3 {
        let y = random_vec(&mut rng, 70);
        let e: Vec<f64> = y.iter().map(|v| 0.2 * v + rng.random_range(-0.05..0.05)).collect();
        model.train_update(&y, &e).unwrap();
    }
    let future = random_vec(&mut rng, 140);
    let both = model.predict_batches(&future);
    // Second batch from the first batch's estimates, fed as history.
    let first = model.predict_batches(&future[..70]);
    let est_first: Vec<f64> = first.iter().zip(&future[..70]).map(|(h, y)| h - y).collect();
    let (second, _) = hybrid_recursion(model.weights(), 4, 50, &future, 70, &est_first);
    assert!(max_abs_diff(&both[..70], &first) <= 1e-12);
    assert!(max_abs_diff(&both[70..], &second) <= 1e-12);
}

#[test]
fn zero_weights_collapse_every_lift() {
    let cfg = default_hybrid();
    let w = DVector::zeros(55);
    for lift in [build_lift_batch(&w, &cfg), build_lift_window(&w, &cfg, 1), build_lift_window(&w, &cfg, 2)] {
        let n = lift.la.nrows();
        assert_eq!(lift.la, DMatrix::identity(n, n));
        assert!(lift.luy.iter().all(|v| *v == 0.0));
        assert!(lift.lue.iter().all(|v| *v == 0.0));
        assert!(lift.lu1.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn default_window_lift_shapes() {
    let cfg = default_hybrid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lift = build_lift_window(&random_weights(&mut rng, 4, 50), &cfg, 1);
    assert_eq!(lift.scope, LiftScope::Window);
    assert_eq!(lift.la.shape(), (140, 140));
    assert_eq!(lift.luy.shape(), (140, 140));
    assert_eq!(lift.lue.shape(), (140, 50));
    assert_eq!(lift.lu1.len(), 140);
}

#[test]
fn bias_only_lift_is_constant() {
    let cfg = default_hybrid();
    let mut w = DVector::zeros(55);
    w[0] = 0.3;
    let lift = build_lift_window(&w, &cfg, 1);
    assert!(lift.lu1.iter().all(|v| (*v - 0.3).abs() < 1e-15));
    assert_eq!(lift.la, DMatrix::identity(140, 140));
}

fn check_batch_lift(seed: u64) -> f64 {
    let cfg = default_hybrid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_weights(&mut rng, 4, 50);
    let lift = build_lift_batch(&w, &cfg);
    let ypb = random_vec(&mut rng, 140);
    let e_prev = random_vec(&mut rng, 70);
    let expect = naive_predict(&w, 4, 50, &ypb, 70, &e_prev);
    let got = lift.apply(
        &DVector::from_column_slice(&ypb[70..]),
        &DVector::from_column_slice(&ypb[..70]),
        &DVector::from_column_slice(&e_prev[20..]),
    );
    max_abs_diff(got.as_slice(), &expect)
}

fn check_window_lift(seed: u64, delay: usize) -> f64 {
    let cfg = default_hybrid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_weights(&mut rng, 4, 50);
    let lift = build_lift_window(&w, &cfg, delay);
    let past = (delay + 1) * 70;
    let ypb = random_vec(&mut rng, past + 140);
    let e_oldest = random_vec(&mut rng, 70);
    // errors of batches after the oldest past batch are never measured
    let expect = naive_predict(&w, 4, 50, &ypb, 70, &e_oldest);
    let got = lift.apply(
        &DVector::from_column_slice(&ypb[past..]),
        &DVector::from_column_slice(&ypb[..past]),
        &DVector::from_column_slice(&e_oldest[20..]),
    );
    max_abs_diff(got.as_slice(), &expect[expect.len() - 140..])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn batch_lift_matches_recursion(seed in any::<u64>()) {
        prop_assert!(check_batch_lift(seed) <= 1e-12);
    }

    #[test]
    fn window_lift_matches_recursion(seed in any::<u64>(), delay in 0usize..3) {
        prop_assert!(check_window_lift(seed, delay) <= 1e-12);
    }

    #[test]
    fn covariance_stays_symmetric_positive_definite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = HybridConfig { q: 2, p: 5, lambda: 0.01, batch_length: 10 };
        let mut model = HybridModel::new(cfg).unwrap();
        for _ in 0..5 {
            let y = random_vec(&mut rng, 10);
            let e = random_vec(&mut rng, 10);
            model.train_update(&y, &e).unwrap();
            let p = model.covariance();
            prop_assert!((p - p.transpose()).amax() == 0.0);
            prop_assert!(p.clone().cholesky().is_some());
        }
    }
}
