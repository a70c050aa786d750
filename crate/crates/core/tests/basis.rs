mod common;

use common::*;
use hybrid_fbf::basis::{build_bspline_basis, filter_and_partition, uniform_pulse, BasisConfig};
use hybrid_fbf::lti::lifted_filter;
use hybrid_fbf::oracle::cardinal_bspline;
use hybrid_fbf::Error;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn pulse_matches_truncated_power_formula() {
    for degree in 1..=7 {
        for spacing in [1, 3, 10] {
            let p = uniform_pulse::<f64>(degree, spacing);
            for (t, v) in p.iter().enumerate() {
                let o = cardinal_bspline(degree, t as f64 / spacing as f64);
                assert!((v - o).abs() < 1e-12, "d={degree} s={spacing} t={t}: {v} vs {o}");
            }
        }
    }
}

#[test]
fn default_basis_sums_to_one_in_the_interior() {
    let cfg = default_basis();
    let b = build_bspline_basis::<f64>(&cfg, 700).unwrap();
    for t in 0..700 {
        let s: f64 = b.row(t).iter().sum();
        assert!((s - 1.0).abs() <= 1e-12, "t={t}: {s}");
    }
}

#[test]
fn five_supports_straddle_each_batch_boundary() {
    let cfg = default_basis();
    let b = build_bspline_basis::<f64>(&cfg, 700).unwrap();
    for boundary in [70usize, 140, 210, 280, 350] {
        let crossing = (0..b.ncols())
            .filter(|&c| {
                let nz: Vec<usize> = (0..700).filter(|&t| b[(t, c)] != 0.0).collect();
                !nz.is_empty() && nz[0] < boundary && *nz.last().unwrap() >= boundary
            })
            .count();
        // degree 5 on spacing 10: supports of 60 steps starting every 10
        // steps; those with a nonzero sample on both sides
        assert_eq!(crossing, 5, "boundary {boundary}");
    }
}

#[test]
fn identity_and_delay_filtering() {
    let cfg = BasisConfig::new(5, 10, 70).unwrap();
    let set = filter_and_partition(&[1.0], &cfg, 0).unwrap();
    assert_eq!(set.psit_c, set.psi_c);
    assert_eq!(set.psit_pc, set.psi_pc);

    let set = filter_and_partition(&[0.0, 1.0], &cfg, 0).unwrap();
    let nw = cfg.window_length;
    assert!(set.psit_c.row(0).iter().all(|v| *v == 0.0));
    for r in 1..nw {
        assert_eq!(set.psit_c.row(r), set.psi_c.row(r - 1));
    }
}

#[test]
fn blocks_do_not_depend_on_window_index() {
    let h = gpb_x_impulse();
    let a = filter_and_partition(&h, &default_basis(), 3).unwrap();
    let b = filter_and_partition(&h, &default_basis(), 7).unwrap();
    assert_eq!(a.psit_c, b.psit_c);
    assert_eq!(a.psit_pc, b.psit_pc);
    assert_eq!(a.psi_c, b.psi_c);
    assert_eq!(a.n_p, b.n_p);
}

#[test]
fn default_basis_is_well_conditioned() {
    let set = default_basis_set();
    assert_eq!(set.n_c, 14);
    assert_eq!(set.n_commit(), 7);
    assert!(set.condition < 1e8);
}

#[test]
fn window_output_equals_filtered_full_input() {
    let h = gpb_x_impulse();
    let cfg = default_basis();
    let set = filter_and_partition(&h, &cfg, 0).unwrap();
    let s = cfg.knot_spacing;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let gp = DVector::from_fn(set.n_p, |_, _| rng.random_range(-1.0..1.0));
        let gc = DVector::from_fn(set.n_c, |_, _| rng.random_range(-1.0..1.0));
        // Full input from the oldest past coefficient's start to the window end.
        let lead = set.n_p * s;
        let len = lead + cfg.window_length;
        let mut x = vec![0.0; len];
        let coefs: Vec<f64> = gp.iter().chain(gc.iter()).copied().collect();
        for (i, g) in coefs.iter().enumerate() {
            for (k, v) in set.pulse.iter().enumerate() {
                if i * s + k < len {
                    x[i * s + k] += g * v;
                }
            }
        }
        let y = lifted_filter(&h, &x, &[]);
        let w = set.output_window(&gc, &gp);
        let err = max_abs_diff(&y[lead..], w.as_slice());
        assert!(err <= 1e-10, "{err:e}");
        let u = set.input_window(&gc, &gp);
        assert!(max_abs_diff(&x[lead..], u.as_slice()) <= 1e-12);
    }
}

#[test]
fn short_horizon_and_degenerate_configs_are_rejected() {
    let cfg = default_basis();
    assert!(matches!(
        build_bspline_basis::<f64>(&cfg, 59),
        Err(Error::HorizonTooShort { horizon: 59, min: 60 })
    ));
    assert!(BasisConfig::new(5, 10, 75).is_err());
    assert!(BasisConfig::new(0, 10, 70).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partition_of_unity(degree in 1usize..7, spacing in 1usize..12, batches in 2usize..6) {
        let cfg = BasisConfig::new(degree, spacing, spacing * 2).unwrap();
        let horizon = (degree + 1) * spacing * batches;
        let b = build_bspline_basis::<f64>(&cfg, horizon).unwrap();
        for t in 0..horizon {
            let s: f64 = b.row(t).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn shift_register_keeps_order(seed in 0u64..1000) {
        let set = default_basis_set();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gp = DVector::from_fn(set.n_p, |_, _| rng.random_range(-1.0..1.0));
        let gc = DVector::from_fn(set.n_c, |_, _| rng.random_range(-1.0..1.0));
        let next = set.shift_past(&gp, &gc);
        let m = set.n_commit();
        for i in 0..set.n_p - m {
            prop_assert_eq!(next[i], gp[i + m]);
        }
        for i in 0..m {
            prop_assert_eq!(next[set.n_p - m + i], gc[i]);
        }
    }
}
