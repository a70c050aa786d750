//! Brute-force reference computations. Each one reaches its answer by a
//! route that shares no numerical code with the production path, so the
//! tests (and `hfbf oracle`) can use them to regenerate expected values.

use nalgebra::{DMatrix, DVector};

use crate::basis::{build_bspline_basis, BasisConfig};
use crate::error::{Error, Result};
use crate::lti::ContinuousTransferFunction;

/// Batch ridge solution `(lambda I + Phi^T Phi)^-1 Phi^T e` over the whole
/// stream, with features built from zero pre-history.
pub fn ridge_weights(ypb: &[f64], e: &[f64], q: usize, p: usize, lambda: f64) -> Result<DVector<f64>> {
    if ypb.len() != e.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} errors",
            ypb.len(),
            e.len()
        )));
    }
    let n = 1 + q + p;
    let mut gram = DMatrix::<f64>::identity(n, n) * lambda;
    let mut rhs = DVector::<f64>::zeros(n);
    let at = |v: &[f64], i: isize| if i >= 0 { v[i as usize] } else { 0.0 };
    for k in 0..e.len() {
        let k = k as isize;
        let mut phi = DVector::<f64>::zeros(n);
        phi[0] = 1.0;
        for i in 0..q {
            phi[1 + i] = at(ypb, k - q as isize + 1 + i as isize);
        }
        for i in 0..p {
            phi[1 + q + i] = at(e, k - p as isize + i as isize);
        }
        gram.ger(1.0, &phi, &phi, 1.0);
        rhs.axpy(e[k as usize], &phi, 1.0);
    }
    gram.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::CovarianceNotPositiveDefinite("ridge normal equations".into()))
}

/// ZOH impulse response by integrating the continuous model with classical
/// RK4 (`substeps` per sample) and differencing the sampled step response.
pub fn zoh_impulse_rk4(
    tf: &ContinuousTransferFunction<f64>,
    ts: f64,
    len: usize,
    substeps: usize,
) -> Vec<f64> {
    let den = tf.denominator();
    let lead = den[0];
    let n = den.len() - 1;
    let mut num = vec![0.0; n + 1 - tf.numerator().len()];
    num.extend_from_slice(tf.numerator());
    let a: Vec<f64> = den.iter().map(|v| v / lead).collect();
    let b: Vec<f64> = num.iter().map(|v| v / lead).collect();
    if n == 0 {
        let mut h = vec![0.0; len];
        if len > 0 {
            h[0] = b[0];
        }
        return h;
    }
    // Time scaled by w0 so the companion coefficients are O(1).
    let w0 = a[n].abs().powf(1.0 / n as f64);
    let at: Vec<f64> = (0..=n).map(|i| a[i] / w0.powi(i as i32)).collect();
    let bt: Vec<f64> = (0..=n).map(|i| b[i] / w0.powi(i as i32)).collect();
    let d = bt[0];
    // x[0] is the highest derivative; y = sum_i (bt_i - d at_i) x[i-1].
    let deriv = |x: &[f64]| -> Vec<f64> {
        let mut dx = vec![0.0; n];
        dx[0] = 1.0 - (1..=n).map(|i| at[i] * x[i - 1]).sum::<f64>();
        dx[1..n].copy_from_slice(&x[..(n - 1)]);
        dx
    };
    let output = |x: &[f64]| d + (1..=n).map(|i| (bt[i] - d * at[i]) * x[i - 1]).sum::<f64>();
    let dt = w0 * ts / substeps as f64;
    let mut x = vec![0.0; n];
    let mut prev = 0.0;
    let mut h = Vec::with_capacity(len);
    for _ in 0..len {
        let s = output(&x);
        h.push(s - prev);
        prev = s;
        for _ in 0..substeps {
            let k1 = deriv(&x);
            let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k1[i]).collect();
            let k2 = deriv(&x2);
            let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * k2[i]).collect();
            let k3 = deriv(&x3);
            let x4: Vec<f64> = (0..n).map(|i| x[i] + dt * k3[i]).collect();
            let k4 = deriv(&x4);
            for i in 0..n {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    h
}

/// Uniform cardinal B-spline of the given degree on `[0, degree + 1)`, by
/// the truncated-power formula.
pub fn cardinal_bspline(degree: usize, x: f64) -> f64 {
    if degree == 0 {
        return if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 };
    }
    let mut fact = 1.0;
    for i in 2..=degree {
        fact *= i as f64;
    }
    let mut binom = 1.0;
    let mut sum = 0.0;
    for i in 0..=degree + 1 {
        let t = x - i as f64;
        if t > 0.0 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * binom * t.powi(degree as i32);
        }
        binom = binom * (degree + 1 - i) as f64 / (i + 1) as f64;
    }
    sum / fact
}

/// Spectral radius from Gelfand's formula `||A^k||^(1/k)` with `k = 2^squarings`,
/// evaluated by repeated normalized squaring. Always an upper estimate; the
/// bias decays like `1/k`.
pub fn gelfand_radius(m: &DMatrix<f64>, squarings: u32) -> f64 {
    let norm0 = m.norm();
    if norm0 == 0.0 {
        return 0.0;
    }
    let mut b = m / norm0;
    let mut log_scale = norm0.ln();
    for _ in 0..squarings {
        let sq = &b * &b;
        let nrm = sq.norm();
        if nrm == 0.0 || !nrm.is_finite() {
            return 0.0;
        }
        b = sq / nrm;
        log_scale = 2.0 * log_scale + nrm.ln();
    }
    (log_scale / 2f64.powi(squarings as i32)).exp()
}

/// Best achievable tracking over a full horizon: least-squares fit of
/// `y_d` by the lifted impulse response acting on a clamped B-spline input.
/// Returns the residual `y_d - G Psi c`.
pub fn lifted_tracking_residual(h: &[f64], y_d: &[f64], config: &BasisConfig) -> Result<Vec<f64>> {
    let len = y_d.len();
    let psi = build_bspline_basis::<f64>(config, len)?;
    let g = DMatrix::from_fn(len, len, |r, c| if r >= c && r - c < h.len() { h[r - c] } else { 0.0 });
    let a = g * psi;
    let yd = DVector::from_column_slice(y_d);
    let c = a
        .clone()
        .svd(true, true)
        .solve(&yd, 1e-12)
        .map_err(|e| Error::Dimension(e.to_string()))?;
    Ok((yd - a * c).iter().copied().collect())
}
