//! Uniform B-spline bases and their model-filtered window blocks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Real;

/// Largest accepted condition number of the filtered current-window block.
pub const MAX_BASIS_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisConfig {
    pub degree: usize,
    pub knot_spacing: usize,
    /// Batch length `N` in time steps.
    pub batch_length: usize,
    /// Window length in time steps, always `2 N`.
    pub window_length: usize,
}

impl BasisConfig {
    pub fn new(degree: usize, knot_spacing: usize, batch_length: usize) -> Result<Self> {
        let cfg = Self {
            degree,
            knot_spacing,
            batch_length,
            window_length: 2 * batch_length,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::InvalidConfig("B-spline degree must be at least 1".into()));
        }
        if self.knot_spacing < 1 {
            return Err(Error::InvalidConfig("knot spacing must be at least 1".into()));
        }
        if self.batch_length == 0 || !self.batch_length.is_multiple_of(self.knot_spacing) {
            return Err(Error::InvalidConfig(format!(
                "batch length {} must be a positive multiple of the knot spacing {}",
                self.batch_length, self.knot_spacing
            )));
        }
        if self.window_length != 2 * self.batch_length {
            return Err(Error::InvalidConfig(format!(
                "window length {} must be twice the batch length {}",
                self.window_length, self.batch_length
            )));
        }
        Ok(())
    }

    /// Support width of one basis function in time steps.
    pub fn support_width(&self) -> usize {
        (self.degree + 1) * self.knot_spacing
    }

    /// Coefficients committed per batch, `N / spacing`.
    pub fn coefficients_per_batch(&self) -> usize {
        self.batch_length / self.knot_spacing
    }

    /// Coefficients whose support starts inside a window.
    pub fn current_count(&self) -> usize {
        self.window_length / self.knot_spacing
    }

    /// Past coefficients whose filtered response, of an impulse response with
    /// `impulse_len` taps, still reaches the window start.
    pub fn past_count(&self, impulse_len: usize) -> usize {
        // A coefficient starting k spacings before the window affects output
        // up to (support - k s + L - 2) relative to the window start.
        let reach = self.support_width() + impulse_len.max(1) - 1;
        (reach - 1) / self.knot_spacing
    }
}

/// Value of the B-spline `i` of `degree` over `knots` at `x` (Cox-de Boor,
/// half-open intervals, 0/0 taken as 0).
pub fn cox_de_boor<T: Real>(knots: &[T], i: usize, degree: usize, x: T) -> T {
    let mut n: Vec<T> = (0..=degree)
        .map(|k| {
            if knots[i + k] <= x && x < knots[i + k + 1] {
                T::one()
            } else {
                T::zero()
            }
        })
        .collect();
    for p in 1..=degree {
        for k in 0..=(degree - p) {
            let a = i + k;
            let left_den = knots[a + p] - knots[a];
            let right_den = knots[a + p + 1] - knots[a + 1];
            let left = if left_den > T::zero() {
                (x - knots[a]) / left_den * n[k]
            } else {
                T::zero()
            };
            let right = if right_den > T::zero() {
                (knots[a + p + 1] - x) / right_den * n[k + 1]
            } else {
                T::zero()
            };
            n[k] = left + right;
        }
    }
    n[0]
}

/// Samples of the uniform B-spline with support `[0, (degree+1) spacing)` at
/// integer time steps `0 .. (degree+1) spacing`.
pub fn uniform_pulse<T: Real>(degree: usize, knot_spacing: usize) -> Vec<T> {
    let knots: Vec<T> = (0..=degree + 1)
        .map(|k| T::from_usize(k * knot_spacing).unwrap())
        .collect();
    (0..(degree + 1) * knot_spacing)
        .map(|t| cox_de_boor(&knots, 0, degree, T::from_usize(t).unwrap()))
        .collect()
}

/// Full-horizon basis with clamped end knots: `degree + 1` repeated knots at
/// both ends and uniform interior knots. Returns a `horizon x (K + degree)`
/// matrix where `K = ceil(horizon / spacing)`.
pub fn build_bspline_basis<T: Real>(config: &BasisConfig, horizon: usize) -> Result<DMatrix<T>> {
    config.validate()?;
    let min = config.support_width();
    if horizon < min {
        return Err(Error::HorizonTooShort { horizon, min });
    }
    let d = config.degree;
    let s = config.knot_spacing;
    let intervals = horizon.div_ceil(s);
    let mut knots = vec![T::zero(); d + 1];
    knots.extend((1..intervals).map(|k| T::from_usize(k * s).unwrap()));
    knots.extend(std::iter::repeat_n(T::from_usize(intervals * s).unwrap(), d + 1));
    let count = intervals + d;
    Ok(DMatrix::from_fn(horizon, count, |t, i| {
        cox_de_boor(&knots, i, d, T::from_usize(t).unwrap())
    }))
}

/// Receding-window basis blocks. Columns of the past block are ordered oldest
/// first; the current block holds the coefficients whose support starts at
/// `0, s, 2s, ...` relative to the window start.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet<T: Real> {
    pub config: BasisConfig,
    pub psi_c: DMatrix<T>,
    pub psi_pc: DMatrix<T>,
    pub psit_c: DMatrix<T>,
    pub psit_pc: DMatrix<T>,
    pub n_c: usize,
    pub n_p: usize,
    /// Sampled unfiltered pulse.
    pub pulse: Vec<T>,
    /// Pulse convolved with the model impulse response.
    pub filtered_pulse: Vec<T>,
    /// Condition number of `psit_c`.
    pub condition: T,
}

impl<T: Real> BasisSet<T> {
    pub fn n_commit(&self) -> usize {
        self.config.coefficients_per_batch()
    }

    /// Past coefficients for the next window: the oldest `N / spacing` drop
    /// out and the first `N / spacing` current coefficients are appended.
    pub fn shift_past(&self, gamma_p: &DVector<T>, gamma_c: &DVector<T>) -> DVector<T> {
        let m = self.n_commit();
        let mut next = DVector::zeros(self.n_p);
        let keep = self.n_p.saturating_sub(m);
        for i in 0..keep {
            next[i] = gamma_p[i + m];
        }
        for i in keep..self.n_p {
            next[i] = gamma_c[i - keep + m.saturating_sub(self.n_p)];
        }
        next
    }

    /// Unfiltered input over the window.
    pub fn input_window(&self, gamma_c: &DVector<T>, gamma_p: &DVector<T>) -> DVector<T> {
        &self.psi_c * gamma_c + &self.psi_pc * gamma_p
    }

    /// Filtered (model output) window.
    pub fn output_window(&self, gamma_c: &DVector<T>, gamma_p: &DVector<T>) -> DVector<T> {
        &self.psit_c * gamma_c + &self.psit_pc * gamma_p
    }
}

fn full_convolution<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![T::zero(); a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        if *ai == T::zero() {
            continue;
        }
        for (k, bk) in b.iter().enumerate() {
            out[i + k] += *ai * *bk;
        }
    }
    out
}

/// Builds the window blocks for window `window_index` from the model impulse
/// response `h`.
///
/// Every column is a shifted copy of the pulse (or filtered pulse), located by
/// its global start time `i s` relative to the window start `j N`; with `N` a
/// multiple of the spacing the relative offsets, and hence the blocks, do not
/// depend on the window index.
pub fn filter_and_partition<T: Real>(
    h: &[T],
    config: &BasisConfig,
    window_index: usize,
) -> Result<BasisSet<T>> {
    config.validate()?;
    if h.is_empty() {
        return Err(Error::Dimension("empty impulse response".into()));
    }
    let s = config.knot_spacing as isize;
    let nw = config.window_length;
    let n_c = config.current_count();
    let n_p = config.past_count(h.len());
    let pulse = uniform_pulse::<T>(config.degree, config.knot_spacing);
    let filtered_pulse = full_convolution(&pulse, h);

    let window_start = (window_index * config.batch_length) as isize;
    let first_current = window_start / s;
    let column = |samples: &[T], coef: isize| -> DVector<T> {
        let offset = coef * s - window_start;
        DVector::from_fn(nw, |r, _| {
            let k = r as isize - offset;
            if k >= 0 && (k as usize) < samples.len() {
                samples[k as usize]
            } else {
                T::zero()
            }
        })
    };
    let block = |samples: &[T], first: isize, count: usize| -> DMatrix<T> {
        let cols: Vec<DVector<T>> = (0..count)
            .map(|c| column(samples, first + c as isize))
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(nw, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    };
    let first_past = first_current - n_p as isize;
    let psi_c = block(&pulse, first_current, n_c);
    let psit_c = block(&filtered_pulse, first_current, n_c);
    let psi_pc = block(&pulse, first_past, n_p);
    let psit_pc = block(&filtered_pulse, first_past, n_p);

    let sv = linalg::singular_values(&psit_c);
    let smax = sv.first().copied().unwrap_or_else(T::zero);
    let smin = sv.last().copied().unwrap_or_else(T::zero);
    let condition = if smin > T::zero() { smax / smin } else { T::max_value().unwrap() };
    if !(condition.to_f64_lossy() < MAX_BASIS_CONDITION) || sv.len() < n_c {
        return Err(Error::IllConditionedBasis {
            condition: condition.to_f64_lossy(),
            singular_values: sv.iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }

    Ok(BasisSet {
        config: *config,
        psi_c,
        psi_pc,
        psit_c,
        psit_pc,
        n_c,
        n_p,
        pulse,
        filtered_pulse,
        condition,
    })
}
