//! Discrete LTI models: zero-order-hold discretization of continuous transfer
//! functions, simulation, impulse responses and lifted (Toeplitz) convolution.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// Relative magnitude below which impulse-response taps are dropped.
pub const IMPULSE_TRUNCATION_REL: f64 = 1e-12;
/// Minimum impulse-response length in dominant time constants.
pub const IMPULSE_FLOOR_TIME_CONSTANTS: f64 = 5.0;
const MAX_IMPULSE_LEN: usize = 1_000_000;

/// SISO continuous-time transfer function, coefficients in descending powers
/// of `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTransferFunction<T: Real> {
    numerator: Vec<T>,
    denominator: Vec<T>,
}

impl<T: Real> ContinuousTransferFunction<T> {
    pub fn new(numerator: Vec<T>, denominator: Vec<T>) -> Result<Self> {
        if denominator.is_empty() {
            return Err(Error::InvalidTransferFunction("empty denominator".into()));
        }
        if denominator[0] == T::zero() {
            return Err(Error::InvalidTransferFunction(
                "denominator leading coefficient is zero".into(),
            ));
        }
        if numerator.iter().chain(denominator.iter()).any(|c| !c.is_finite()) {
            return Err(Error::InvalidTransferFunction("non-finite coefficient".into()));
        }
        // Leading zeros in the numerator do not change the degree.
        let first = numerator.iter().position(|c| *c != T::zero());
        let numerator = match first {
            Some(i) => numerator[i..].to_vec(),
            None => vec![T::zero()],
        };
        if numerator.len() > denominator.len() {
            return Err(Error::ImproperTransferFunction {
                num: numerator.len() - 1,
                den: denominator.len() - 1,
            });
        }
        Ok(Self {
            numerator,
            denominator,
        })
    }

    pub fn numerator(&self) -> &[T] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[T] {
        &self.denominator
    }

    pub fn order(&self) -> usize {
        self.denominator.len() - 1
    }

    /// `num(0) / den(0)`.
    pub fn dc_gain(&self) -> T {
        let n0 = *self.numerator.last().unwrap();
        let d0 = *self.denominator.last().unwrap();
        n0 / d0
    }

    /// Copy with the two mid-band denominator coefficients (powers
    /// `s^(n - n/2)` and `s^(n - n/2 - 1)`) multiplied by `factor`.
    pub fn with_mid_band_scale(&self, factor: T) -> Result<Self> {
        let n = self.order();
        if n < 2 {
            return Err(Error::InvalidTransferFunction(format!(
                "mid-band detuning needs order >= 2, got {n}"
            )));
        }
        let mut den = self.denominator.clone();
        let i = n / 2;
        den[i] *= factor;
        den[i + 1] *= factor;
        Self::new(self.numerator.clone(), den)
    }

    /// Numerator and denominator normalized to a monic denominator, numerator
    /// zero-padded to the denominator length.
    fn normalized(&self) -> (Vec<T>, Vec<T>) {
        let lead = self.denominator[0];
        let den: Vec<T> = self.denominator.iter().map(|c| *c / lead).collect();
        let pad = den.len() - self.numerator.len();
        let mut num = vec![T::zero(); pad];
        num.extend(self.numerator.iter().map(|c| *c / lead));
        (num, den)
    }
}

/// Discrete-time SISO state-space model `x+ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace<T: Real> {
    a: DMatrix<T>,
    b: DVector<T>,
    c: RowDVector<T>,
    d: T,
    ts: T,
}

impl<T: Real> DiscreteStateSpace<T> {
    /// Validates dimensions and requires every eigenvalue of `A` strictly
    /// inside the unit disk.
    pub fn new(a: DMatrix<T>, b: DVector<T>, c: RowDVector<T>, d: T, ts: T) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.len() != n || c.len() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B has {} rows, C has {} columns",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        if !(ts > T::zero()) {
            return Err(Error::InvalidConfig("sampling interval must be positive".into()));
        }
        let model = Self { a, b, c, d, ts };
        if n > 0 {
            let rho = model.state_spectral_radius().ok_or_else(|| {
                Error::UnstableModel("eigenvalue computation did not converge".into())
            })?;
            if rho >= T::one() {
                return Err(Error::UnstableModel(format!(
                    "discrete spectral radius {rho} is not below 1"
                )));
            }
        }
        Ok(model)
    }

    /// Memoryless gain.
    pub fn static_gain(d: T, ts: T) -> Result<Self> {
        Self::new(DMatrix::zeros(0, 0), DVector::zeros(0), RowDVector::zeros(0), d, ts)
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }
    pub fn b(&self) -> &DVector<T> {
        &self.b
    }
    pub fn c(&self) -> &RowDVector<T> {
        &self.c
    }
    pub fn d(&self) -> T {
        self.d
    }
    pub fn ts(&self) -> T {
        self.ts
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn state_spectral_radius(&self) -> Option<T> {
        linalg::spectral_radius_dense(&self.a)
    }

    /// `C (I - A)^-1 B + D`.
    pub fn dc_gain(&self) -> T {
        let n = self.order();
        if n == 0 {
            return self.d;
        }
        let m = DMatrix::<T>::identity(n, n) - &self.a;
        let x = m.lu().solve(&self.b).expect("I - A is invertible for a stable model");
        (&self.c * x)[0] + self.d
    }

    /// Dominant time constant in samples, `-1 / ln(rho(A))`.
    pub fn dominant_time_constant_steps(&self) -> T {
        match self.state_spectral_radius() {
            Some(r) if r > T::zero() => -T::one() / r.ln(),
            _ => T::zero(),
        }
    }

    /// One simulation step; returns the output and advances `x`.
    pub fn step(&self, x: &mut DVector<T>, u: T) -> T {
        let y = if self.order() == 0 {
            self.d * u
        } else {
            (&self.c * &*x)[0] + self.d * u
        };
        if self.order() > 0 {
            let next = &self.a * &*x + &self.b * u;
            *x = next;
        }
        y
    }

    /// Simulates from state `x0`; returns outputs and the final state.
    pub fn simulate(&self, input: &[T], x0: Option<&DVector<T>>) -> (Vec<T>, DVector<T>) {
        let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(self.order()));
        let y = input.iter().map(|&u| self.step(&mut x, u)).collect();
        (y, x)
    }
}

/// Exact zero-order-hold discretization.
///
/// The continuous model is realized in controllable canonical form on the
/// frequency-normalized variable `s / w0`, `w0 = |a_n|^(1/n)`, which is a
/// diagonal similarity of the plain companion form and keeps `A Ts` well
/// scaled for the matrix exponential. `[A B; 0 0] Ts` is then exponentiated.
pub fn discretize_zoh<T: Real>(
    ctf: &ContinuousTransferFunction<T>,
    ts: T,
) -> Result<DiscreteStateSpace<T>> {
    if !(ts > T::zero()) {
        return Err(Error::InvalidConfig("sampling interval must be positive".into()));
    }
    let (num, den) = ctf.normalized();
    let n = den.len() - 1;
    if n == 0 {
        return DiscreteStateSpace::static_gain(num[0], ts);
    }
    let a_n = den[n].magnitude();
    if a_n == T::zero() {
        return Err(Error::UnstableModel("pole at the origin".into()));
    }
    let w0 = a_n.powf(T::one() / T::from_usize(n).unwrap());

    // Scaled coefficients: a~_i = a_i / w0^i, b~_i = b_i / w0^i.
    let mut scale = T::one();
    let mut a_s = vec![T::zero(); n + 1];
    let mut b_s = vec![T::zero(); n + 1];
    for i in 0..=n {
        a_s[i] = den[i] / scale;
        b_s[i] = num[i] / scale;
        scale *= w0;
    }

    let mut a_sigma = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        a_sigma[(0, i)] = -a_s[i + 1];
    }
    for i in 1..n {
        a_sigma[(i, i - 1)] = T::one();
    }
    let d = b_s[0];
    let c = RowDVector::from_fn(n, |_, i| b_s[i + 1] - b_s[0] * a_s[i + 1]);

    let poles = linalg::eigenvalues(&a_sigma)
        .ok_or_else(|| Error::UnstableModel("pole computation did not converge".into()))?;
    if let Some((re, im)) = poles.iter().find(|(re, _)| *re >= T::zero()) {
        return Err(Error::UnstableModel(format!(
            "continuous pole {}{:+}j is not in the open left half plane",
            *re * w0,
            *im * w0
        )));
    }

    // A = w0 A_sigma, B = w0 e1.
    let mut aug = DMatrix::<T>::zeros(n + 1, n + 1);
    for r in 0..n {
        for col in 0..n {
            aug[(r, col)] = a_sigma[(r, col)] * w0 * ts;
        }
    }
    aug[(0, n)] = w0 * ts;
    let e = aug.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, 1)).column(0).into_owned();
    DiscreteStateSpace::new(ad, bd, c, d, ts)
}

/// First `n` samples of the impulse response: `h(0) = D`,
/// `h(k) = C A^(k-1) B`.
pub fn impulse_response<T: Real>(model: &DiscreteStateSpace<T>, n: usize) -> Vec<T> {
    let mut h = Vec::with_capacity(n);
    if n == 0 {
        return h;
    }
    h.push(model.d());
    if model.order() == 0 {
        h.resize(n, T::zero());
        return h;
    }
    let mut x = model.b().clone();
    for _ in 1..n {
        h.push((model.c() * &x)[0]);
        x = model.a() * x;
    }
    h
}

/// Impulse response truncated after the last tap with
/// `|h(k)| >= 1e-12 max|h|`, but never shorter than five dominant time
/// constants.
pub fn truncated_impulse_response<T: Real>(model: &DiscreteStateSpace<T>) -> Vec<T> {
    if model.order() == 0 {
        return vec![model.d()];
    }
    let tau = model.dominant_time_constant_steps().to_f64_lossy();
    let floor = ((IMPULSE_FLOOR_TIME_CONSTANTS * tau).ceil() as usize).max(1) + 1;
    let c_norm = model.c().norm();
    let rel = T::lit(IMPULSE_TRUNCATION_REL);

    let mut h = vec![model.d()];
    let mut max_abs = model.d().magnitude();
    let mut last_significant = 0usize;
    let mut x = model.b().clone();
    while h.len() < MAX_IMPULSE_LEN {
        let v = (model.c() * &x)[0];
        h.push(v);
        if v.magnitude() > max_abs {
            max_abs = v.magnitude();
        }
        if v.magnitude() >= rel * max_abs {
            last_significant = h.len() - 1;
        }
        x = model.a() * x;
        // |h(k)| <= ||C|| ||x_k||; stop once that bound sits well below the
        // threshold and the floor is reached.
        if h.len() >= floor && c_norm * x.norm() < rel * max_abs * T::lit(1e-3) {
            break;
        }
    }
    h.truncate((last_significant + 1).max(floor));
    h
}

/// `output(k) = sum_i h(i) x(k - i)` over the tail-then-input sequence `x`,
/// evaluated at the input positions.
pub fn lifted_filter<T: Real>(h: &[T], input: &[T], initial_tail: &[T]) -> Vec<T> {
    let tail = initial_tail.len();
    let mut out = Vec::with_capacity(input.len());
    let sample = |idx: usize| -> T {
        if idx < tail {
            initial_tail[idx]
        } else {
            input[idx - tail]
        }
    };
    for k in 0..input.len() {
        let idx = tail + k;
        let taps = h.len().min(idx + 1);
        let mut acc = T::zero();
        for (i, hi) in h.iter().take(taps).enumerate() {
            acc += *hi * sample(idx - i);
        }
        out.push(acc);
    }
    out
}

/// Lifted convolution matrix built from an impulse response. Entry `(r, c)`
/// is `h(r + row_offset - c)` when that index is non-negative, else zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedOperator<T: Real> {
    matrix: DMatrix<T>,
    row_offset: isize,
}

impl<T: Real> LiftedOperator<T> {
    pub fn from_impulse_response(h: &[T], rows: usize, cols: usize, row_offset: isize) -> Self {
        let matrix = DMatrix::from_fn(rows, cols, |r, c| {
            let lag = r as isize + row_offset - c as isize;
            if lag >= 0 && (lag as usize) < h.len() {
                h[lag as usize]
            } else {
                T::zero()
            }
        });
        Self { matrix, row_offset }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn row_offset(&self) -> isize {
        self.row_offset
    }

    pub fn apply(&self, input: &DVector<T>) -> DVector<T> {
        &self.matrix * input
    }

    /// No entry maps a later input to an earlier output.
    pub fn is_causal(&self) -> bool {
        let (rows, cols) = self.matrix.shape();
        (0..rows).all(|r| {
            (0..cols).all(|c| {
                r as isize + self.row_offset >= c as isize || self.matrix[(r, c)] == T::zero()
            })
        })
    }

    /// Entries depend only on the output/input index difference.
    pub fn is_toeplitz(&self) -> bool {
        let (rows, cols) = self.matrix.shape();
        (1..rows).all(|r| (1..cols).all(|c| self.matrix[(r, c)] == self.matrix[(r - 1, c - 1)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_order(a: f64) -> ContinuousTransferFunction<f64> {
        ContinuousTransferFunction::new(vec![1.0], vec![1.0, a]).unwrap()
    }

    #[test]
    fn rejects_improper_and_degenerate_transfer_functions() {
        assert!(matches!(
            ContinuousTransferFunction::new(vec![1.0, 0.0, 1.0], vec![1.0, 1.0]),
            Err(Error::ImproperTransferFunction { num: 2, den: 1 })
        ));
        assert!(ContinuousTransferFunction::<f64>::new(vec![1.0], vec![0.0, 1.0]).is_err());
        assert!(ContinuousTransferFunction::<f64>::new(vec![1.0], vec![]).is_err());
        // leading numerator zeros are not an improperness
        let tf = ContinuousTransferFunction::new(vec![0.0, 0.0, 2.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(tf.numerator(), &[2.0]);
    }

    #[test]
    fn rejects_unstable_continuous_poles() {
        let tf = ContinuousTransferFunction::new(vec![1.0], vec![1.0, -2.0]).unwrap();
        assert!(matches!(discretize_zoh(&tf, 0.001), Err(Error::UnstableModel(_))));
        let osc = ContinuousTransferFunction::new(vec![1.0], vec![1.0, 0.0, 4.0]).unwrap();
        assert!(matches!(discretize_zoh(&osc, 0.001), Err(Error::UnstableModel(_))));
    }

    #[test]
    fn pure_gain_discretizes_to_feedthrough() {
        let tf = ContinuousTransferFunction::new(vec![3.0], vec![1.0]).unwrap();
        for ts in [1e-3, 0.5, 2.0] {
            let m = discretize_zoh(&tf, ts).unwrap();
            assert_eq!(m.order(), 0);
            assert_eq!(m.d(), 3.0);
        }
    }

    #[test]
    fn first_order_lag_matches_closed_form_zoh() {
        // 1/(s+a): pole exp(-a Ts), step response (1 - exp(-a k Ts)) / a.
        let (a, ts) = (10.0, 0.001);
        let m = discretize_zoh(&first_order(a), ts).unwrap();
        assert_eq!(m.order(), 1);
        let pole = m.a()[(0, 0)];
        assert!((pole - (-0.01f64).exp()).abs() < 1e-15);
        let (y, _) = m.simulate(&[1.0; 200], None);
        for (k, yk) in y.iter().enumerate() {
            let exact = (1.0 - (-a * k as f64 * ts).exp()) / a;
            assert!((yk - exact).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn impulse_response_of_gain_and_delay() {
        let gain = DiscreteStateSpace::static_gain(3.0, 1.0).unwrap();
        assert_eq!(impulse_response(&gain, 4), vec![3.0, 0.0, 0.0, 0.0]);
        let delay = DiscreteStateSpace::new(
            DMatrix::zeros(1, 1),
            DVector::from_element(1, 1.0),
            RowDVector::from_element(1, 1.0),
            0.0,
            1.0,
        )
        .unwrap();
        assert_eq!(impulse_response(&delay, 4), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn truncation_respects_floor_and_threshold() {
        let m = discretize_zoh(&first_order(10.0), 0.001).unwrap();
        let h = truncated_impulse_response(&m);
        let tau = m.dominant_time_constant_steps();
        assert!((tau - 100.0).abs() < 1e-9);
        let max = h.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        // exp(-k/100) drops below 1e-12 after ~2763 taps
        assert!(h.len() as f64 >= 5.0 * tau);
        assert!(h.last().unwrap().abs() >= 1e-12 * max);
        let next = impulse_response(&m, h.len() + 1)[h.len()];
        assert!(next.abs() < 1e-12 * max);
    }

    #[test]
    fn lifted_filter_hand_cases() {
        assert_eq!(lifted_filter(&[1.0], &[1.0, -2.0, 3.0], &[]), vec![1.0, -2.0, 3.0]);
        assert_eq!(lifted_filter(&[1.0, 0.5], &[1.0, 0.0], &[]), vec![1.0, 0.5]);
        // tail carries the previous input sample
        assert_eq!(lifted_filter(&[1.0, 0.5], &[0.0, 0.0], &[2.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn lifted_operator_is_causal_toeplitz() {
        let h = [1.0, 0.5, 0.25, 0.125];
        let op = LiftedOperator::from_impulse_response(&h, 6, 6, 0);
        assert!(op.is_causal());
        assert!(op.is_toeplitz());
        for r in 0..6 {
            for c in 0..6 {
                let expected = if r >= c && r - c < 4 { h[r - c] } else { 0.0 };
                assert_eq!(op.matrix()[(r, c)], expected);
            }
        }
        let x = DVector::from_vec(vec![1.0f64, 2.0, 0.0, -1.0, 0.0, 0.0]);
        let y = op.apply(&x);
        let direct = lifted_filter(&h, x.as_slice(), &[]);
        for i in 0..6 {
            assert!((y[i] - direct[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn mid_band_detune_scales_two_coefficients() {
        let tf = ContinuousTransferFunction::new(
            vec![1.0],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
        )
        .unwrap();
        let d = tf.with_mid_band_scale(0.5).unwrap();
        assert_eq!(d.denominator(), &[1.0, 2.0, 3.0, 2.0, 2.5, 6.0, 7.0]);
    }
}
