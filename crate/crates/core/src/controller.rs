//! Receding-horizon filtered-basis-function controller. Standard operation is
//! the hybrid path with an identity lift.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::hybrid::{build_lift_window, DataDrivenLift, HybridConfig, HybridModel};
use crate::linalg::{pseudo_inverse, PseudoInverse};
use crate::lti::DiscreteStateSpace;
use crate::plant::{Batch, Plant};
use crate::scalar::Real;
use crate::stability::{self, check_stability, ClosedLoopSystem, StateLayout, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerMode {
    /// Uncompensated: the desired trajectory is commanded directly.
    None,
    Standard,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mitigation {
    /// Reject the alarming weights, fall back to the last weights that did
    /// not alarm and stop training.
    FreezeLearning,
    /// Switch to the identity lift for the rest of the run.
    RevertStandard,
    Halt,
    /// Record the verdict only.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig<T> {
    pub mode: ControllerMode,
    pub warmup_batches: usize,
    pub mitigation: Mitigation,
    pub stability_threshold: T,
    /// Relative singular-value cutoff of the pseudoinverse.
    pub rcond: T,
    /// Train the hybrid model on incoming measurements.
    pub learning: bool,
    /// Evaluate the spectral radius every window.
    pub monitor: bool,
}

impl<T: Real> ControllerConfig<T> {
    pub fn new(mode: ControllerMode) -> Self {
        Self {
            mode,
            warmup_batches: 78,
            mitigation: Mitigation::FreezeLearning,
            stability_threshold: T::lit(stability::DEFAULT_WARNING_THRESHOLD),
            rcond: T::lit(1e-10),
            learning: true,
            monitor: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stability_threshold > T::zero() && self.stability_threshold <= T::one()) {
            return Err(Error::InvalidConfig(format!(
                "stability threshold {} must lie in (0, 1]",
                self.stability_threshold
            )));
        }
        if !(self.rcond >= T::zero() && self.rcond < T::one()) {
            return Err(Error::InvalidConfig("rcond must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Weights handed to the window lift: a fixed vector or the trained weights,
/// with the error-feedback entries scaled by a factor ramping linearly from
/// `scale_start` to `scale_end` over `ramp_windows` windows starting at
/// `ramp_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule<T: Real> {
    pub base: Option<DVector<T>>,
    pub scale_start: T,
    pub scale_end: T,
    pub ramp_start: usize,
    pub ramp_windows: usize,
}

impl<T: Real> Default for WeightSchedule<T> {
    fn default() -> Self {
        Self {
            base: None,
            scale_start: T::one(),
            scale_end: T::one(),
            ramp_start: 0,
            ramp_windows: 0,
        }
    }
}

impl<T: Real> WeightSchedule<T> {
    pub fn fixed(weights: DVector<T>) -> Self {
        Self {
            base: Some(weights),
            ..Self::default()
        }
    }

    pub fn scale_at(&self, window: usize) -> T {
        if window < self.ramp_start {
            return self.scale_start;
        }
        if self.ramp_windows == 0 {
            return self.scale_end;
        }
        let t = ((window - self.ramp_start) as f64 / self.ramp_windows as f64).min(1.0);
        self.scale_start + (self.scale_end - self.scale_start) * T::lit(t)
    }

    pub fn weights_at(&self, window: usize, trained: &DVector<T>, q: usize) -> DVector<T> {
        let w = self.base.as_ref().unwrap_or(trained);
        scale_error_feedback(w, q, self.scale_at(window))
    }
}

/// Copy of `w` with the error-feedback entries (after the bias and the `q`
/// prediction taps) multiplied by `s`.
pub fn scale_error_feedback<T: Real>(w: &DVector<T>, q: usize, s: T) -> DVector<T> {
    let mut w = w.clone();
    if s != T::one() {
        for v in w.iter_mut().skip(1 + q) {
            *v *= s;
        }
    }
    w
}

/// `gamma_C = (L_a PsiT_C)^+ (y_d - L_a PsiT_PC gamma_P - free)`.
pub fn optimize_window<T: Real>(
    y_d: &DVector<T>,
    basis: &BasisSet<T>,
    lift: &DataDrivenLift<T>,
    pinv: &DMatrix<T>,
    gamma_p: &DVector<T>,
    free_response: &DVector<T>,
) -> DVector<T> {
    let past = &lift.la * (&basis.psit_pc * gamma_p);
    pinv * (y_d - past - free_response)
}

/// First `N` samples of the unfiltered window input.
pub fn reconstruct_input<T: Real>(
    gamma_c: &DVector<T>,
    gamma_p: &DVector<T>,
    basis: &BasisSet<T>,
) -> Vec<T> {
    let n = basis.config.batch_length;
    let window = basis.input_window(gamma_c, gamma_p);
    window.as_slice()[..n].to_vec()
}

/// Per-window diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord<T> {
    pub window: usize,
    pub spectral_radius: Option<T>,
    pub verdict: Option<Verdict>,
    /// Norm of the change of the weights used by the lift since the previous
    /// window.
    pub weight_change_norm: T,
    pub hybrid_active: bool,
    pub mitigated: bool,
    /// Rank of `L_a PsiT_C` fell below `n_c` (truncated pseudoinverse).
    pub rank_deficient: bool,
}

/// Per-step traces of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRecord<T> {
    pub y_d: Vec<T>,
    pub u: Vec<T>,
    pub y_true: Vec<T>,
    pub y_meas: Vec<T>,
    pub y_hat_pb: Vec<T>,
    pub y_hat_h: Vec<T>,
    pub windows: Vec<WindowRecord<T>>,
}

impl<T: Real> Default for TrackingRecord<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> TrackingRecord<T> {
    pub fn new() -> Self {
        Self {
            y_d: Vec::new(),
            u: Vec::new(),
            y_true: Vec::new(),
            y_meas: Vec::new(),
            y_hat_pb: Vec::new(),
            y_hat_h: Vec::new(),
            windows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Tracking error `y_d - y_meas` at step `k`.
    pub fn error(&self, k: usize) -> T {
        self.y_d[k] - self.y_meas[k]
    }

    /// RMS of the tracking error over steps `from..to`.
    pub fn rms_error(&self, from: usize, to: usize) -> T {
        let to = to.min(self.len());
        if from >= to {
            return T::zero();
        }
        let mut acc = T::zero();
        for k in from..to {
            let e = self.error(k);
            acc += e * e;
        }
        (acc / T::from_usize(to - from).unwrap()).sqrt()
    }
}

/// What one call to [`Controller::step`] produced.
#[derive(Debug, Clone)]
pub struct WindowOutcome<T: Real> {
    pub record: WindowRecord<T>,
    pub u: Vec<T>,
    pub y_hat_pb: Vec<T>,
    pub y_hat_h: Vec<T>,
    pub y_true: Vec<T>,
    pub gamma_c: DVector<T>,
}

pub struct Controller<T: Real> {
    config: ControllerConfig<T>,
    basis: BasisSet<T>,
    model: HybridModel<T>,
    delay: usize,
    schedule: WeightSchedule<T>,
    standard_pinv: PseudoInverse<T>,
    /// Physics model for the uncompensated mode's prediction trace.
    physics: DiscreteStateSpace<T>,
    physics_state: DVector<T>,
    gamma_p: DVector<T>,
    window: usize,
    ypb_committed: Vec<Vec<T>>,
    yh_committed: Vec<Vec<T>>,
    /// Second halves of the previous window's predictions.
    ypb_lookahead: Vec<T>,
    yh_lookahead: Vec<T>,
    e_measured: Vec<Vec<T>>,
    safe_weights: DVector<T>,
    last_weights: DVector<T>,
    frozen: bool,
    reverted: bool,
    identity_radius: Option<T>,
    warm_vector: Option<DVector<T>>,
}

impl<T: Real> Controller<T> {
    /// `delay` must equal the plant's measurement delay in batches.
    pub fn new(
        config: ControllerConfig<T>,
        basis: BasisSet<T>,
        hybrid: HybridConfig<T>,
        physics: DiscreteStateSpace<T>,
        delay: usize,
    ) -> Result<Self> {
        config.validate()?;
        if hybrid.batch_length != basis.config.batch_length {
            return Err(Error::Dimension(format!(
                "hybrid batch length {} differs from basis batch length {}",
                hybrid.batch_length, basis.config.batch_length
            )));
        }
        let model = HybridModel::new(hybrid)?;
        let standard_pinv = pseudo_inverse(&basis.psit_c, config.rcond);
        let nf = hybrid.feature_len();
        let n = basis.config.batch_length;
        let physics_state = DVector::zeros(physics.order());
        Ok(Self {
            gamma_p: DVector::zeros(basis.n_p),
            ypb_lookahead: vec![T::zero(); n],
            yh_lookahead: vec![T::zero(); n],
            config,
            basis,
            model,
            delay,
            schedule: WeightSchedule::default(),
            standard_pinv,
            physics,
            physics_state,
            window: 0,
            ypb_committed: Vec::new(),
            yh_committed: Vec::new(),
            e_measured: Vec::new(),
            safe_weights: DVector::zeros(nf),
            last_weights: DVector::zeros(nf),
            frozen: false,
            reverted: false,
            identity_radius: None,
            warm_vector: None,
        })
    }

    pub fn with_schedule(mut self, schedule: WeightSchedule<T>) -> Result<Self> {
        if let Some(b) = &schedule.base {
            if b.len() != self.model.config().feature_len() {
                return Err(Error::Dimension(format!(
                    "weight vector has {} entries, expected {}",
                    b.len(),
                    self.model.config().feature_len()
                )));
            }
        }
        self.schedule = schedule;
        Ok(self)
    }

    pub fn config(&self) -> &ControllerConfig<T> {
        &self.config
    }
    pub fn basis(&self) -> &BasisSet<T> {
        &self.basis
    }
    pub fn model(&self) -> &HybridModel<T> {
        &self.model
    }
    pub fn window(&self) -> usize {
        self.window
    }
    pub fn gamma_p(&self) -> &DVector<T> {
        &self.gamma_p
    }
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
    pub fn is_reverted(&self) -> bool {
        self.reverted
    }

    fn hybrid_active(&self) -> bool {
        self.config.mode == ControllerMode::Hybrid
            && self.window >= self.config.warmup_batches
            && !self.reverted
    }

    fn learning_enabled(&self) -> bool {
        self.config.mode == ControllerMode::Hybrid && self.config.learning && !self.frozen
    }

    /// Computes `e = y - ypb` for the next measured batch and trains on it.
    /// Returns the weight change norm.
    pub fn ingest_measurement(&mut self, y: &Batch<T>) -> Result<T> {
        let expected = self.e_measured.len();
        if y.index != expected || y.index >= self.ypb_committed.len() {
            return Err(Error::MeasurementMismatch {
                expected,
                got: y.index,
            });
        }
        let ypb = &self.ypb_committed[y.index];
        if y.values.len() != ypb.len() {
            return Err(Error::Dimension(format!(
                "measured batch has {} samples, expected {}",
                y.values.len(),
                ypb.len()
            )));
        }
        let e: Vec<T> = y.values.iter().zip(ypb).map(|(a, b)| *a - *b).collect();
        let change = if self.learning_enabled() {
            let ypb = ypb.clone();
            self.model.train_update(&ypb, &e)?
        } else {
            T::zero()
        };
        self.e_measured.push(e);
        Ok(change)
    }

    fn batch_or_zero<'a>(store: &'a [Vec<T>], index: isize, zeros: &'a [T]) -> &'a [T] {
        if index < 0 {
            zeros
        } else {
            &store[index as usize]
        }
    }

    /// Physics predictions of batches `j-D-1 .. j-1` and the measured error
    /// tail of batch `j-D-1`.
    fn past_inputs(&self) -> Result<(DVector<T>, DVector<T>)> {
        let n = self.basis.config.batch_length;
        let p = self.model.config().p;
        let zeros = vec![T::zero(); n];
        let first = self.window as isize - self.delay as isize - 1;
        let mut ypb = Vec::with_capacity((self.delay + 1) * n);
        for b in first..self.window as isize {
            ypb.extend_from_slice(Self::batch_or_zero(&self.ypb_committed, b, &zeros));
        }
        let e = if first < 0 {
            zeros
        } else {
            self.e_measured
                .get(first as usize)
                .ok_or(Error::BatchNeverProduced(first as usize))?
                .clone()
        };
        Ok((DVector::from_vec(ypb), DVector::from_column_slice(&e[n - p..])))
    }

    /// Closed-loop state at the start of the current window.
    pub fn state_vector(&self) -> DVector<T> {
        let layout = self.layout();
        let n = layout.batch_length;
        let d = self.delay;
        let zeros = vec![T::zero(); n];
        let mut x = DVector::zeros(layout.dim());
        let first = self.window as isize - d as isize - 1;
        for k in 0..=d {
            let b = first + k as isize;
            let yh = Self::batch_or_zero(&self.yh_committed, b, &zeros);
            let yp = Self::batch_or_zero(&self.ypb_committed, b, &zeros);
            x.rows_mut(layout.yh(k), n).copy_from_slice(yh);
            x.rows_mut(layout.ypb(k), n).copy_from_slice(yp);
        }
        x.rows_mut(layout.yh(d + 1), n).copy_from_slice(&self.yh_lookahead);
        x.rows_mut(layout.ypb(d + 1), n).copy_from_slice(&self.ypb_lookahead);
        x.rows_mut(layout.gamma(), layout.n_p).copy_from(&self.gamma_p);
        x[layout.bias()] = T::one();
        x
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            batch_length: self.basis.config.batch_length,
            delay: self.delay,
            n_p: self.basis.n_p,
            n_c: self.basis.n_c,
        }
    }

    /// Window lift and pseudoinverse for the given weights.
    pub fn lift_for(&self, weights: &DVector<T>) -> (DataDrivenLift<T>, PseudoInverse<T>) {
        let lift = build_lift_window(weights, self.model.config(), self.delay);
        let pinv = if lift.is_identity() {
            self.standard_pinv.clone()
        } else {
            pseudo_inverse(&(&lift.la * &self.basis.psit_c), self.config.rcond)
        };
        (lift, pinv)
    }

    /// Closed-loop system for the given weights.
    pub fn closed_loop(&self, weights: &DVector<T>) -> Result<ClosedLoopSystem<T>> {
        let (lift, pinv) = self.lift_for(weights);
        stability::assemble_closed_loop(&lift, &self.basis, &pinv.matrix)
    }

    fn monitor(&mut self, lift: &DataDrivenLift<T>, pinv: &PseudoInverse<T>) -> Result<T> {
        if lift.is_identity() {
            if let Some(r) = self.identity_radius {
                return Ok(r);
            }
        }
        let system = stability::assemble_closed_loop(lift, &self.basis, &pinv.matrix)?;
        let levels = [self.config.stability_threshold, T::one()];
        let est = stability::spectral_radius(&system, self.warm_vector.as_ref(), &levels);
        if est.vector.is_some() {
            self.warm_vector = est.vector;
        }
        if lift.is_identity() {
            self.identity_radius = Some(est.radius);
        }
        Ok(est.radius)
    }

    /// Runs one window: ingests due measurements, optimizes, commands batch
    /// `j` on the plant and advances the shift register. `y_d` is the desired
    /// output over the window (`2N` samples).
    pub fn step(&mut self, y_d: &[T], plant: &mut dyn Plant<T>) -> Result<WindowOutcome<T>> {
        let n = self.basis.config.batch_length;
        let nw = self.basis.config.window_length;
        if y_d.len() != nw {
            return Err(Error::Dimension(format!(
                "desired window has {} samples, expected {nw}",
                y_d.len()
            )));
        }
        let j = self.window;
        if plant.commanded() != j {
            return Err(Error::OutOfOrderBatch {
                expected: plant.commanded(),
                got: j,
            });
        }

        while self.e_measured.len() < plant.commanded() {
            match plant.fetch_measurement(self.e_measured.len())? {
                Some(batch) => {
                    self.ingest_measurement(&batch)?;
                }
                None => break,
            }
        }

        if self.config.mode == ControllerMode::None {
            return self.step_uncompensated(y_d, plant);
        }

        let active = self.hybrid_active();
        let q = self.model.config().q;
        let mut weights = if active {
            if self.frozen {
                self.safe_weights.clone()
            } else {
                self.schedule.weights_at(j, self.model.weights(), q)
            }
        } else {
            DVector::zeros(self.model.config().feature_len())
        };
        let (mut lift, mut pinv) = self.lift_for(&weights);

        let mut radius = None;
        let mut verdict = None;
        let mut mitigated = false;
        if self.config.monitor {
            let r = self.monitor(&lift, &pinv)?;
            let v = check_stability(r, self.config.stability_threshold);
            radius = Some(r);
            verdict = Some(v);
            if active && v == Verdict::Alarm && self.config.mitigation != Mitigation::None {
                mitigated = true;
                match self.config.mitigation {
                    Mitigation::Halt => {
                        return Err(Error::StabilityHalt {
                            window: j,
                            radius: r.to_f64_lossy(),
                        })
                    }
                    Mitigation::FreezeLearning => {
                        self.frozen = true;
                        weights = self.safe_weights.clone();
                    }
                    Mitigation::RevertStandard => {
                        self.reverted = true;
                        weights = DVector::zeros(self.model.config().feature_len());
                    }
                    Mitigation::None => unreachable!(),
                }
                let rebuilt = self.lift_for(&weights);
                lift = rebuilt.0;
                pinv = rebuilt.1;
            } else if active && v != Verdict::Alarm {
                self.safe_weights = weights.clone();
            }
        }

        let (ypb_past, e_tail) = self.past_inputs()?;
        let free = lift.free_response(&ypb_past, &e_tail);
        let y_d_vec = DVector::from_column_slice(y_d);
        let gamma_c = optimize_window(
            &y_d_vec,
            &self.basis,
            &lift,
            &pinv.matrix,
            &self.gamma_p,
            &free,
        );
        let ypb_window = self.basis.output_window(&gamma_c, &self.gamma_p);
        let yh_window = &lift.la * &ypb_window + &free;
        let u = reconstruct_input(&gamma_c, &self.gamma_p, &self.basis);

        let y_hat_pb = ypb_window.as_slice()[..n].to_vec();
        let y_hat_h = yh_window.as_slice()[..n].to_vec();
        let y_true = plant
            .apply_batch(
                &Batch {
                    index: j,
                    values: u.clone(),
                },
                &y_hat_h,
            )?
            .values;

        let weight_change_norm = (&weights - &self.last_weights).norm();
        self.last_weights = weights;
        self.ypb_committed.push(y_hat_pb.clone());
        self.yh_committed.push(y_hat_h.clone());
        self.ypb_lookahead = ypb_window.as_slice()[n..].to_vec();
        self.yh_lookahead = yh_window.as_slice()[n..].to_vec();
        self.gamma_p = self.basis.shift_past(&self.gamma_p, &gamma_c);
        self.window += 1;

        Ok(WindowOutcome {
            record: WindowRecord {
                window: j,
                spectral_radius: radius,
                verdict,
                weight_change_norm,
                hybrid_active: active && !(mitigated && lift.is_identity()),
                mitigated,
                rank_deficient: pinv.rank < self.basis.n_c,
            },
            u,
            y_hat_pb,
            y_hat_h,
            y_true,
            gamma_c,
        })
    }

    fn step_uncompensated(
        &mut self,
        y_d: &[T],
        plant: &mut dyn Plant<T>,
    ) -> Result<WindowOutcome<T>> {
        let n = self.basis.config.batch_length;
        let j = self.window;
        let u = y_d[..n].to_vec();
        let y_hat_pb: Vec<T> = u
            .iter()
            .map(|&uk| self.physics.step(&mut self.physics_state, uk))
            .collect();
        let y_true = plant
            .apply_batch(
                &Batch {
                    index: j,
                    values: u.clone(),
                },
                &y_hat_pb,
            )?
            .values;
        self.ypb_committed.push(y_hat_pb.clone());
        self.yh_committed.push(y_hat_pb.clone());
        self.window += 1;
        Ok(WindowOutcome {
            record: WindowRecord {
                window: j,
                spectral_radius: None,
                verdict: None,
                weight_change_norm: T::zero(),
                hybrid_active: false,
                mitigated: false,
                rank_deficient: false,
            },
            u,
            y_hat_h: y_hat_pb.clone(),
            y_hat_pb,
            y_true,
            gamma_c: DVector::zeros(0),
        })
    }
}

/// Result of [`run_tracking`]: the record up to the last completed window and
/// the error that stopped the run, if any.
#[derive(Debug, Clone)]
pub struct TrackingRun<T> {
    pub record: TrackingRecord<T>,
    pub error: Option<Error>,
}

/// Runs `batches` windows. `y_d` is held at its final value past its end so
/// that every window has a full desired trajectory.
pub fn run_tracking<T: Real>(
    controller: &mut Controller<T>,
    plant: &mut dyn Plant<T>,
    y_d: &[T],
    batches: usize,
) -> TrackingRun<T> {
    let n = controller.basis().config.batch_length;
    let nw = controller.basis().config.window_length;
    let hold = y_d.last().copied().unwrap_or_else(T::zero);
    let needed = batches * n + nw;
    let mut desired = y_d.to_vec();
    if desired.len() < needed {
        desired.resize(needed, hold);
    }
    let mut record = TrackingRecord::new();
    let mut error = None;
    for j in 0..batches {
        let window = &desired[j * n..j * n + nw];
        match controller.step(window, plant) {
            Ok(out) => {
                record.y_d.extend_from_slice(&window[..n]);
                record.u.extend(out.u);
                record.y_true.extend(out.y_true);
                record.y_hat_pb.extend(out.y_hat_pb);
                record.y_hat_h.extend(out.y_hat_h);
                record.windows.push(out.record);
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    let done = record.windows.len();
    for j in 0..done {
        match plant.recorded_measurement(j) {
            Some(v) => record.y_meas.extend(v),
            None => record.y_meas.extend(std::iter::repeat_n(T::zero(), n)),
        }
    }
    TrackingRun { record, error }
}
