mod common;

use common::*;
use hybrid_fbf::lti::{
    discretize_zoh, impulse_response, lifted_filter, truncated_impulse_response,
    ContinuousTransferFunction, DiscreteStateSpace, LiftedOperator,
};
use hybrid_fbf::oracle::zoh_impulse_rk4;
use hybrid_fbf::Error;
use nalgebra::{DMatrix, DVector, RowDVector};
use proptest::prelude::*;

fn step_response(h: &[f64]) -> Vec<f64> {
    h.iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

fn assert_zoh_exact(tf: &ContinuousTransferFunction<f64>, len: usize) {
    let ss = discretize_zoh(tf, TS).unwrap();
    let s = step_response(&impulse_response(&ss, len));
    let s_ref = step_response(&zoh_impulse_rk4(tf, TS, len, 200));
    let scale = peak(&s_ref);
    let err = max_abs_diff(&s, &s_ref);
    assert!(err <= 1e-8 * scale, "step response off by {err:e} (peak {scale})");
}

#[test]
fn gpb_x_dc_gain_is_unity() {
    let ss = discretize_zoh(&gpb_x(), TS).unwrap();
    assert!((ss.dc_gain() - 1.0).abs() < 1e-6, "{}", ss.dc_gain());
    assert!((gpb_x().dc_gain() - 1.0).abs() < 1e-12);
}

#[test]
fn gpb_x_impulse_sums_to_dc_gain() {
    let ss = discretize_zoh(&gpb_x(), TS).unwrap();
    let h = impulse_response(&ss, 4000);
    let total: f64 = h.iter().sum();
    assert!((total - 1.0).abs() < 1e-3, "{total}");
}

#[test]
fn zoh_step_matches_integrated_continuous_model() {
    assert_zoh_exact(&gpb_x(), 600);
    assert_zoh_exact(&gpb_y(), 600);
    assert_zoh_exact(&ContinuousTransferFunction::new(vec![10.0], vec![1.0, 10.0]).unwrap(), 300);
    // biproper, lightly damped
    let tf = ContinuousTransferFunction::new(vec![0.5, 3.0, 4.0e4], vec![1.0, 20.0, 4.0e4]).unwrap();
    assert_zoh_exact(&tf, 300);
}

#[test]
fn first_order_pole_matches_closed_form() {
    let tf = ContinuousTransferFunction::new(vec![1.0], vec![1.0, 10.0]).unwrap();
    let ss = discretize_zoh(&tf, TS).unwrap();
    let pole = (-10.0 * TS).exp();
    let h = impulse_response(&ss, 5);
    // h(k) = (1 - e^{-a Ts}) / a * e^{-a Ts (k - 1)}
    for (k, v) in h.iter().enumerate().skip(1) {
        let expect = (1.0 - pole) / 10.0 * pole.powi(k as i32 - 1);
        assert!((v - expect).abs() < 1e-15, "k={k}: {v} vs {expect}");
    }
    assert_eq!(h[0], 0.0);
}

#[test]
fn pure_gain_and_delay_impulses() {
    let ss = discretize_zoh(&ContinuousTransferFunction::new(vec![3.0], vec![1.0]).unwrap(), TS)
        .unwrap();
    assert_eq!(ss.order(), 0);
    assert_eq!(impulse_response(&ss, 4), vec![3.0, 0.0, 0.0, 0.0]);

    let delay = DiscreteStateSpace::new(
        DMatrix::zeros(1, 1),
        DVector::from_element(1, 1.0),
        RowDVector::from_element(1, 1.0),
        0.0,
        TS,
    )
    .unwrap();
    assert_eq!(impulse_response(&delay, 4), vec![0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn rejects_improper_and_unstable_models() {
    assert!(matches!(
        ContinuousTransferFunction::new(vec![1.0, 0.0, 1.0], vec![1.0, 1.0]),
        Err(Error::ImproperTransferFunction { .. })
    ));
    let unstable = ContinuousTransferFunction::new(vec![1.0], vec![1.0, -2.0, 5.0]).unwrap();
    assert!(matches!(discretize_zoh(&unstable, TS), Err(Error::UnstableModel(_))));
}

#[test]
fn truncation_keeps_the_response() {
    let ss = discretize_zoh(&gpb_x(), TS).unwrap();
    let h = truncated_impulse_response(&ss);
    let long = impulse_response(&ss, h.len() + 2000);
    let hmax = peak(&long);
    assert!(long[h.len()..].iter().all(|v| v.abs() < 1e-12 * hmax));
    assert!(h.len() as f64 >= 5.0 * ss.dominant_time_constant_steps());
}

/// FIR realization `x(k+1) = shift(x) + e1 u`, `y = h[1..] x + h[0] u`.
fn fir_state_space(h: &[f64]) -> DiscreteStateSpace<f64> {
    let n = h.len() - 1;
    let a = DMatrix::from_fn(n, n, |r, c| if r == c + 1 { 1.0 } else { 0.0 });
    let mut b = DVector::zeros(n);
    b[0] = 1.0;
    let c = RowDVector::from_row_slice(&h[1..]);
    DiscreteStateSpace::new(a, b, c, h[0], TS).unwrap()
}

#[test]
fn lifted_filter_hand_cases() {
    assert_eq!(lifted_filter(&[1.0], &[1.0, -2.0, 3.0], &[]), vec![1.0, -2.0, 3.0]);
    assert_eq!(lifted_filter(&[1.0, 0.5], &[1.0, 0.0], &[]), vec![1.0, 0.5]);
    assert_eq!(lifted_filter(&[1.0, 0.5], &[0.0, 0.0], &[2.0]), vec![1.0, 0.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lifted_filter_equals_state_recursion_fir(
        h in prop::collection::vec(-1.0f64..1.0, 50),
        input in prop::collection::vec(-1.0f64..1.0, 200),
    ) {
        let ss = fir_state_space(&h);
        let (y, _) = ss.simulate(&input, None);
        let lifted = lifted_filter(&h, &input, &[]);
        prop_assert!(max_abs_diff(&y, &lifted) <= 1e-10);
    }

    #[test]
    fn lifted_filter_with_tail_equals_continued_recursion(
        wn in 20.0f64..400.0,
        zeta in 0.05f64..0.9,
        tail in prop::collection::vec(-1.0f64..1.0, 60),
        input in prop::collection::vec(-1.0f64..1.0, 120),
    ) {
        let tf = ContinuousTransferFunction::new(vec![wn * wn], vec![1.0, 2.0 * zeta * wn, wn * wn]).unwrap();
        let ss = discretize_zoh(&tf, TS).unwrap();
        let h = impulse_response(&ss, 4000);
        let mut all = tail.clone();
        all.extend_from_slice(&input);
        let (y, _) = ss.simulate(&all, None);
        let lifted = lifted_filter(&h, &input, &tail);
        prop_assert!(max_abs_diff(&y[tail.len()..], &lifted) <= 1e-10);
    }

    #[test]
    fn lifted_operators_are_causal_toeplitz(
        h in prop::collection::vec(-1.0f64..1.0, 1..40),
        rows in 1usize..30,
        cols in 1usize..30,
    ) {
        let op = LiftedOperator::from_impulse_response(&h, rows, cols, 0);
        prop_assert!(op.is_causal());
        prop_assert!(op.is_toeplitz());
        let m = op.matrix();
        for r in 0..rows {
            for c in 0..cols {
                let expect = if r >= c && r - c < h.len() { h[r - c] } else { 0.0 };
                prop_assert_eq!(m[(r, c)], expect);
            }
        }
    }
}
