//! Linear hybrid model: a physics prediction corrected by a linear regression
//! on recent physics predictions and past prediction errors, trained online by
//! recursive least squares, and its lifted (matrix) form over batches and
//! windows.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridConfig<T> {
    /// Number of physics-prediction terms in the feature vector.
    pub q: usize,
    /// Number of past-error terms in the feature vector.
    pub p: usize,
    pub lambda: T,
    pub batch_length: usize,
}

impl<T: Real> HybridConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.q < 1 || self.p < 1 {
            return Err(Error::InvalidConfig("q and p must both be at least 1".into()));
        }
        if !(self.lambda > T::zero()) {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        if self.batch_length == 0 {
            return Err(Error::InvalidConfig("batch length must be positive".into()));
        }
        if self.p > self.batch_length || self.q - 1 > self.batch_length {
            return Err(Error::InvalidConfig(format!(
                "p = {} and q - 1 = {} must not exceed the batch length {}",
                self.p,
                self.q - 1,
                self.batch_length
            )));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        1 + self.q + self.p
    }
}

/// `[1, ypb(k-q+1) .. ypb(k), e(k-p) .. e(k-1)]` from the `q` most recent
/// physics predictions and `p` most recent errors, both oldest first.
pub fn feature_vector<T: Real>(ypb_recent: &[T], e_recent: &[T]) -> DVector<T> {
    let mut phi = DVector::zeros(1 + ypb_recent.len() + e_recent.len());
    phi[0] = T::one();
    for (i, v) in ypb_recent.iter().chain(e_recent.iter()).enumerate() {
        phi[i + 1] = *v;
    }
    phi
}

/// Steps the hybrid recursion `y_h(k) = ypb(k) + w' phi(k)` over
/// `ypb[start..]`. Entries of `ypb` before `start` are history; `e_tail`
/// holds the errors immediately preceding `start` (oldest first, zero padded
/// on the left if shorter than `p`). Each estimate is fed back as the error
/// of its step. Returns the predictions and the error estimates.
pub fn hybrid_recursion<T: Real>(
    weights: &DVector<T>,
    q: usize,
    p: usize,
    ypb: &[T],
    start: usize,
    e_tail: &[T],
) -> (Vec<T>, Vec<T>) {
    debug_assert_eq!(weights.len(), 1 + q + p);
    let bias = weights[0];
    let wy = &weights.as_slice()[1..=q];
    let we = &weights.as_slice()[q + 1..];
    // error buffer: p samples of padding/tail followed by the estimates
    let mut e = vec![T::zero(); p];
    let take = e_tail.len().min(p);
    e[p - take..].copy_from_slice(&e_tail[e_tail.len() - take..]);
    let steps = ypb.len().saturating_sub(start);
    e.reserve(steps);
    let mut yh = Vec::with_capacity(steps);
    for k in start..ypb.len() {
        let mut est = bias;
        for (i, w) in wy.iter().enumerate() {
            // ypb(k - q + 1 + i)
            let idx = k as isize - q as isize + 1 + i as isize;
            if idx >= 0 {
                est += *w * ypb[idx as usize];
            }
        }
        let base = e.len() - p;
        for (i, w) in we.iter().enumerate() {
            est += *w * e[base + i];
        }
        e.push(est);
        yh.push(ypb[k] + est);
    }
    (yh, e.split_off(p))
}

/// Which recursion a lift unrolls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftScope {
    Batch,
    Window,
}

/// Matrix form of the hybrid recursion:
/// `y_h = L_a ypb_current + L_uy ypb_past + L_ue e_tail + L_u1`.
///
/// `ypb_past` spans `delay + 1` batches ending right before the current
/// batches; `e_tail` is the last `p` measured errors of the oldest of those
/// batches. The later `delay` past batches are predicted recursively, their
/// errors being unavailable.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDrivenLift<T: Real> {
    pub la: DMatrix<T>,
    pub luy: DMatrix<T>,
    pub lue: DMatrix<T>,
    pub lu1: DVector<T>,
    pub scope: LiftScope,
    pub delay: usize,
    identity: bool,
}

impl<T: Real> DataDrivenLift<T> {
    pub fn identity(config: &HybridConfig<T>, scope: LiftScope, delay: usize) -> Self {
        let n = config.batch_length;
        let out = current_batches(scope) * n;
        Self {
            la: DMatrix::identity(out, out),
            luy: DMatrix::zeros(out, (delay + 1) * n),
            lue: DMatrix::zeros(out, config.p),
            lu1: DVector::zeros(out),
            scope,
            delay,
            identity: true,
        }
    }

    /// True when built from all-zero weights.
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn output_len(&self) -> usize {
        self.la.nrows()
    }

    /// Contribution of the unalterable terms (past predictions, measured
    /// errors and bias).
    pub fn free_response(&self, ypb_past: &DVector<T>, e_tail: &DVector<T>) -> DVector<T> {
        &self.luy * ypb_past + &self.lue * e_tail + &self.lu1
    }

    pub fn apply(
        &self,
        ypb_current: &DVector<T>,
        ypb_past: &DVector<T>,
        e_tail: &DVector<T>,
    ) -> DVector<T> {
        &self.la * ypb_current + self.free_response(ypb_past, e_tail)
    }
}

fn current_batches(scope: LiftScope) -> usize {
    match scope {
        LiftScope::Batch => 1,
        LiftScope::Window => 2,
    }
}

/// Unrolls the recursion by pushing unit vectors through
/// [`hybrid_recursion`]; the bias column comes from a run with zero inputs
/// and the linear columns from runs with the bias removed.
fn build_lift<T: Real>(
    weights: &DVector<T>,
    config: &HybridConfig<T>,
    scope: LiftScope,
    delay: usize,
) -> DataDrivenLift<T> {
    let n = config.batch_length;
    let (q, p) = (config.q, config.p);
    if weights.iter().all(|w| *w == T::zero()) {
        return DataDrivenLift::identity(config, scope, delay);
    }
    let cur = current_batches(scope) * n;
    let past = (delay + 1) * n;
    let total = past + cur;
    let out_start = total - cur;

    let run = |w: &DVector<T>, ypb: &[T], e: &[T]| -> Vec<T> {
        let (yh, _) = hybrid_recursion(w, q, p, ypb, n, e);
        yh[out_start - n..].to_vec()
    };

    let zeros_y = vec![T::zero(); total];
    let zeros_e = vec![T::zero(); p];
    let lu1 = DVector::from_vec(run(weights, &zeros_y, &zeros_e));

    let mut linear = weights.clone();
    linear[0] = T::zero();
    let mut luy = DMatrix::zeros(cur, past);
    let mut la = DMatrix::zeros(cur, cur);
    let mut lue = DMatrix::zeros(cur, p);
    let mut ypb = zeros_y.clone();
    for c in 0..total {
        ypb[c] = T::one();
        let col = run(&linear, &ypb, &zeros_e);
        ypb[c] = T::zero();
        let target = if c < past {
            luy.column_mut(c)
        } else {
            la.column_mut(c - past)
        };
        let mut target = target;
        for (r, v) in col.into_iter().enumerate() {
            target[r] = v;
        }
    }
    let mut e = zeros_e;
    for c in 0..p {
        e[c] = T::one();
        let col = run(&linear, &zeros_y, &e);
        e[c] = T::zero();
        for (r, v) in col.into_iter().enumerate() {
            lue[(r, c)] = v;
        }
    }
    DataDrivenLift {
        la,
        luy,
        lue,
        lu1,
        scope,
        delay,
        identity: false,
    }
}

/// One-batch lift over `[ypb(j-1); ypb(j); e(j-1) tail]` with no delay.
pub fn build_lift_batch<T: Real>(
    weights: &DVector<T>,
    config: &HybridConfig<T>,
) -> DataDrivenLift<T> {
    build_lift(weights, config, LiftScope::Batch, 0)
}

/// Two-batch window lift for a measurement delay of `delay` batches: past
/// predictions span batches `j-delay-1 .. j-1` and the error tail comes from
/// batch `j-delay-1`.
pub fn build_lift_window<T: Real>(
    weights: &DVector<T>,
    config: &HybridConfig<T>,
    delay: usize,
) -> DataDrivenLift<T> {
    build_lift(weights, config, LiftScope::Window, delay)
}

/// Hybrid model weights with recursive least squares training on measured
/// batches.
#[derive(Debug, Clone)]
pub struct HybridModel<T: Real> {
    config: HybridConfig<T>,
    weights: DVector<T>,
    covariance: DMatrix<T>,
    /// Last `q - 1` physics predictions of the trained data.
    ypb_tail: Vec<T>,
    /// Last `p` measured errors of the trained data.
    e_tail: Vec<T>,
    trained_batches: usize,
    samples: usize,
}

impl<T: Real> HybridModel<T> {
    pub fn new(config: HybridConfig<T>) -> Result<Self> {
        config.validate()?;
        let n = config.feature_len();
        Ok(Self {
            weights: DVector::zeros(n),
            covariance: DMatrix::identity(n, n) / config.lambda,
            ypb_tail: vec![T::zero(); config.q - 1],
            e_tail: vec![T::zero(); config.p],
            trained_batches: 0,
            samples: 0,
            config,
        })
    }

    pub fn config(&self) -> &HybridConfig<T> {
        &self.config
    }

    pub fn weights(&self) -> &DVector<T> {
        &self.weights
    }

    pub fn covariance(&self) -> &DMatrix<T> {
        &self.covariance
    }

    pub fn trained_batches(&self) -> usize {
        self.trained_batches
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Feature vector for step `k` of a batch about to be trained, given that
    /// batch's physics predictions and measured errors.
    fn training_feature(&self, ypb: &[T], e: &[T], k: usize) -> DVector<T> {
        let q = self.config.q;
        let p = self.config.p;
        let yrec: Vec<T> = (0..q)
            .map(|i| {
                let idx = k as isize - q as isize + 1 + i as isize;
                if idx >= 0 {
                    ypb[idx as usize]
                } else {
                    self.ypb_tail[(self.ypb_tail.len() as isize + idx) as usize]
                }
            })
            .collect();
        let erec: Vec<T> = (0..p)
            .map(|i| {
                let idx = k as isize - p as isize + i as isize;
                if idx >= 0 {
                    e[idx as usize]
                } else {
                    self.e_tail[(p as isize + idx) as usize]
                }
            })
            .collect();
        feature_vector(&yrec, &erec)
    }

    /// RLS update with the next measured batch (physics predictions and
    /// measured errors `y - ypb`). Returns the norm of the weight change.
    /// On loss of positive definiteness the model is left unchanged.
    pub fn train_update(&mut self, ypb: &[T], e: &[T]) -> Result<T> {
        let n = self.config.batch_length;
        if ypb.len() != n || e.len() != n {
            return Err(Error::Dimension(format!(
                "training batch has {} predictions and {} errors, expected {n}",
                ypb.len(),
                e.len()
            )));
        }
        let w0 = self.weights.clone();
        let p0 = self.covariance.clone();
        for k in 0..n {
            let phi = self.training_feature(ypb, e, k);
            let v = &self.covariance * &phi;
            let denom = T::one() + phi.dot(&v);
            let gain = &v / denom;
            let residual = e[k] - self.weights.dot(&phi);
            self.weights.axpy(residual, &gain, T::one());
            self.covariance.ger(-T::one(), &gain, &v, T::one());
        }
        let sym = (&self.covariance + self.covariance.transpose()) * T::lit(0.5);
        self.covariance = sym;
        if self.covariance.clone().cholesky().is_none()
            || self.weights.iter().any(|w| !w.is_finite())
        {
            self.weights = w0;
            self.covariance = p0;
            return Err(Error::CovarianceNotPositiveDefinite(format!(
                "after batch {} ({} samples)",
                self.trained_batches, self.samples
            )));
        }
        let q = self.config.q;
        let p = self.config.p;
        if q > 1 {
            self.ypb_tail = ypb[n - (q - 1)..].to_vec();
        }
        self.e_tail = e[n - p..].to_vec();
        self.trained_batches += 1;
        self.samples += n;
        Ok((&self.weights - w0).norm())
    }

    /// Predicts the batches following the last trained batch.
    pub fn predict_batches(&self, ypb_future: &[T]) -> Vec<T> {
        let mut ypb = self.ypb_tail.clone();
        let start = ypb.len();
        ypb.extend_from_slice(ypb_future);
        hybrid_recursion(
            &self.weights,
            self.config.q,
            self.config.p,
            &ypb,
            start,
            &self.e_tail,
        )
        .0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(q: usize, p: usize, n: usize) -> HybridConfig<f64> {
        HybridConfig {
            q,
            p,
            lambda: 0.01,
            batch_length: n,
        }
    }

    #[test]
    fn config_bounds() {
        assert!(cfg(4, 50, 70).validate().is_ok());
        assert!(cfg(0, 50, 70).validate().is_err());
        assert!(cfg(4, 0, 70).validate().is_err());
        assert!(cfg(4, 71, 70).validate().is_err());
        let mut c = cfg(4, 50, 70);
        c.lambda = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(cfg(4, 50, 70).feature_len(), 55);
    }

    #[test]
    fn zero_histories_give_unit_bias_feature() {
        let phi = feature_vector(&[0.0f64; 4], &[0.0; 50]);
        assert_eq!(phi.len(), 55);
        assert_eq!(phi[0], 1.0);
        assert!(phi.iter().skip(1).all(|v| *v == 0.0));
    }

    #[test]
    fn hand_two_step_prediction() {
        // w = [b, wy, we] with q = 1, p = 1
        let w = DVector::from_vec(vec![0.5f64, 0.0, 0.2]);
        let (yh, e) = hybrid_recursion(&w, 1, 1, &[1.0, 2.0], 0, &[1.0]);
        // e(0) = 0.5 + 0.2 * 1 = 0.7, e(1) = 0.5 + 0.2 * 0.7 = 0.64
        assert!((e[0] - 0.7).abs() < 1e-15 && (e[1] - 0.64).abs() < 1e-15);
        assert!((yh[0] - 1.7).abs() < 1e-15 && (yh[1] - 2.64).abs() < 1e-15);
    }

    #[test]
    fn empty_training_keeps_zero_weights() {
        let m = HybridModel::new(cfg(4, 50, 70)).unwrap();
        assert!(m.weights().iter().all(|w| *w == 0.0));
        let pred = m.predict_batches(&[1.0, 2.0, 3.0]);
        assert_eq!(pred, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_weight_lifts_are_identity() {
        let c = cfg(4, 50, 70);
        let w = DVector::zeros(c.feature_len());
        let l = build_lift_window(&w, &c, 1);
        assert!(l.is_identity());
        assert_eq!(l.la, DMatrix::identity(140, 140));
        assert_eq!(l.luy.shape(), (140, 140));
        assert_eq!(l.lue.shape(), (140, 50));
        assert!(l.luy.iter().chain(l.lue.iter()).chain(l.lu1.iter()).all(|v| *v == 0.0));
        let b = build_lift_batch(&w, &c);
        assert_eq!(b.la, DMatrix::identity(70, 70));
        assert_eq!(b.luy.shape(), (70, 70));
    }

    #[test]
    fn bias_only_lift_is_constant() {
        let c = cfg(2, 3, 6);
        let mut w = DVector::zeros(c.feature_len());
        w[0] = 0.25;
        let l = build_lift_batch(&w, &c);
        assert!(l.lu1.iter().all(|v| *v == 0.25));
        assert_eq!(l.la, DMatrix::identity(6, 6));
    }
}
