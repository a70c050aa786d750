#![allow(dead_code)]

use hybrid_fbf::basis::{filter_and_partition, BasisConfig, BasisSet};
use hybrid_fbf::config::ExperimentConfig;
use hybrid_fbf::controller::{Controller, ControllerConfig, ControllerMode};
use hybrid_fbf::hybrid::HybridConfig;
use hybrid_fbf::lti::{discretize_zoh, truncated_impulse_response, ContinuousTransferFunction};
use nalgebra::DVector;
use rand::Rng;

pub fn gpb_x() -> ContinuousTransferFunction<f64> {
    ContinuousTransferFunction::new(
        vec![-62.48, 5.91e4, 3.82e6, 2.96e9, 1.96e11, 2.29e13],
        vec![1.0, 242.6, 1.36e5, 1.73e7, 4.22e9, 2.75e11, 2.29e13],
    )
    .unwrap()
}

pub fn gpb_y() -> ContinuousTransferFunction<f64> {
    ContinuousTransferFunction::new(
        vec![-84.79, 2.87e4, -8.03e6, 6.45e9, 3.86e11, 3.29e14, 3.74e16],
        vec![1.0, 211.2, 2.56e5, 4.11e7, 2.07e10, 2.39e12, 5.28e14, 3.74e16],
    )
    .unwrap()
}

pub const TS: f64 = 0.001;

pub fn default_basis() -> BasisConfig {
    BasisConfig::new(5, 10, 70).unwrap()
}

pub fn default_hybrid() -> HybridConfig<f64> {
    HybridConfig {
        q: 4,
        p: 50,
        lambda: 0.01,
        batch_length: 70,
    }
}

pub fn gpb_x_impulse() -> Vec<f64> {
    truncated_impulse_response(&discretize_zoh(&gpb_x(), TS).unwrap())
}

pub fn default_basis_set() -> BasisSet<f64> {
    filter_and_partition(&gpb_x_impulse(), &default_basis(), 0).unwrap()
}

pub fn controller(mode: ControllerMode, delay: usize) -> Controller<f64> {
    let physics = discretize_zoh(&gpb_x(), TS).unwrap();
    Controller::new(
        ControllerConfig::new(mode),
        default_basis_set(),
        default_hybrid(),
        physics,
        delay,
    )
    .unwrap()
}

/// Error-feedback taps shaped like a lightly damped 35 Hz echo, plus a small
/// bias and one prediction tap. Closed-loop stable at scale 1.
pub fn echo_weights() -> DVector<f64> {
    let mut w = DVector::zeros(55);
    w[0] = 0.001;
    w[1] = 0.01;
    for i in 0..50 {
        let lag = (50 - i) as f64;
        w[5 + i] = 0.9 * (2.0 * std::f64::consts::PI * 35.0 * TS * lag).cos() / 25.0;
    }
    w
}

pub fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn peak(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Model-echo experiment with [`echo_weights`] fixed, followed by `extra`
/// config lines. Warm-up is 20 windows unless `extra` sets it.
pub fn echo_config(duration: f64, extra: &str) -> ExperimentConfig {
    let warmup = if extra.contains("warmup_batches") { "" } else { "controller.warmup_batches = 20\n" };
    let w: Vec<String> = echo_weights().iter().map(|v| format!("{v:e}")).collect();
    config(&format!(
        "duration = {duration}\nplant.kind = model-echo\ntrajectory.kind = square-loop\n\
         trajectory.v_lim = 60\ntrajectory.a_lim = 3\ntrajectory.j_lim = 6000\n\
         hybrid.learning = false\nhybrid.initial_weights = [{}]\n{warmup}{extra}\n",
        w.join(",")
    ))
}

/// Scale of the error-feedback taps of [`echo_weights`] at which the closed
/// loop reaches unit spectral radius.
pub fn echo_critical_scale() -> f64 {
    use hybrid_fbf::controller::scale_error_feedback;
    use hybrid_fbf::stability::{critical_scale, spectral_radius_reference};
    let c = hybrid_fbf::experiment::build_controller(&echo_config(8.0, "")).unwrap();
    let w = echo_weights();
    critical_scale(
        |s| Ok(spectral_radius_reference(&c.closed_loop(&scale_error_feedback(&w, 4, s))?).unwrap()),
        0.0,
        4.0,
        1e-4,
    )
    .unwrap()
    .unwrap()
}

/// Step-by-step prediction written out directly: `e` holds measured errors
/// for indices below `start` and receives the estimates from `start` on.
pub fn naive_predict(w: &DVector<f64>, q: usize, p: usize, ypb: &[f64], start: usize, e_known: &[f64]) -> Vec<f64> {
    let mut e = e_known.to_vec();
    e.resize(ypb.len(), 0.0);
    let mut out = Vec::new();
    for k in start..ypb.len() {
        let mut est = w[0];
        for i in 0..q {
            let idx = k as isize - q as isize + 1 + i as isize;
            if idx >= 0 {
                est += w[1 + i] * ypb[idx as usize];
            }
        }
        for i in 0..p {
            let idx = k as isize - p as isize + i as isize;
            if idx >= 0 {
                est += w[1 + q + i] * e[idx as usize];
            }
        }
        e[k] = est;
        out.push(ypb[k] + est);
    }
    out
}

pub fn random_weights(rng: &mut rand_chacha::ChaCha8Rng, q: usize, p: usize) -> DVector<f64> {
    DVector::from_fn(1 + q + p, |i, _| {
        if i == 0 {
            rng.random_range(-0.1..0.1)
        } else if i <= q {
            rng.random_range(-0.5..0.5)
        } else {
            rng.random_range(-1.0..1.0) / p as f64
        }
    })
}
