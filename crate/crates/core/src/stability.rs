//! Closed-loop window-to-window model of the hybrid controller and its
//! spectral-radius stability check.
//!
//! State layout for a measurement delay of `D` batches:
//! `[yh(j-D-1) .. yh(j), ypb(j-D-1) .. ypb(j), gamma_P, 1]`, i.e.
//! `2 (D + 2) N + n_p + 1` entries.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::hybrid::{DataDrivenLift, LiftScope};
use crate::linalg::{self, ArnoldiOptions};
use crate::scalar::Real;

pub const DEFAULT_WARNING_THRESHOLD: f64 = 0.97;

/// Offsets of the state blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub batch_length: usize,
    pub delay: usize,
    pub n_p: usize,
    pub n_c: usize,
}

impl StateLayout {
    /// Number of batch slots per signal, `D + 2`.
    pub fn slots(&self) -> usize {
        self.delay + 2
    }
    /// Offset of `yh(j - D - 1 + k)`.
    pub fn yh(&self, k: usize) -> usize {
        k * self.batch_length
    }
    /// Offset of `ypb(j - D - 1 + k)`.
    pub fn ypb(&self, k: usize) -> usize {
        (self.slots() + k) * self.batch_length
    }
    pub fn gamma(&self) -> usize {
        2 * self.slots() * self.batch_length
    }
    pub fn bias(&self) -> usize {
        self.gamma() + self.n_p
    }
    pub fn dim(&self) -> usize {
        self.bias() + 1
    }
}

/// `x+ = A x + B u`, `u = K x + M r` with `u = gamma_C` and `r = y_d` over
/// the window.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem<T: Real> {
    pub layout: StateLayout,
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub k: DMatrix<T>,
    pub m: DMatrix<T>,
}

impl<T: Real> ClosedLoopSystem<T> {
    pub fn state_matrix(&self) -> DMatrix<T> {
        &self.a + &self.b * &self.k
    }

    /// One window of the closed loop. The bias entry is an exogenous
    /// constant and is held at 1.
    pub fn propagate(&self, x: &DVector<T>, y_d: &DVector<T>) -> DVector<T> {
        let u = &self.k * x + &self.m * y_d;
        let mut next = &self.a * x + &self.b * u;
        next[self.layout.bias()] = T::one();
        next
    }
}

/// Builds the closed-loop matrices from a window lift, the basis blocks and
/// the controller's pseudoinverse `M = (L_a PsiT_C)^+`.
pub fn assemble_closed_loop<T: Real>(
    lift: &DataDrivenLift<T>,
    basis: &BasisSet<T>,
    m: &DMatrix<T>,
) -> Result<ClosedLoopSystem<T>> {
    let n = basis.config.batch_length;
    let nw = basis.config.window_length;
    let (n_p, n_c) = (basis.n_p, basis.n_c);
    let d = lift.delay;
    let p = lift.lue.ncols();
    if lift.scope != LiftScope::Window
        || lift.la.shape() != (nw, nw)
        || lift.luy.shape() != (nw, (d + 1) * n)
        || lift.lu1.len() != nw
        || lift.lue.nrows() != nw
        || p > n
        || m.shape() != (n_c, nw)
    {
        return Err(Error::Dimension(format!(
            "lift ({:?}, L_a {:?}, L_uy {:?}, L_ue {:?}) or M {:?} does not match window {nw}, delay {d}, n_c {n_c}",
            lift.scope,
            lift.la.shape(),
            lift.luy.shape(),
            lift.lue.shape(),
            m.shape()
        )));
    }
    let layout = StateLayout {
        batch_length: n,
        delay: d,
        n_p,
        n_c,
    };
    let nx = layout.dim();

    // G: free response of the window prediction as a function of the state.
    let mut g = DMatrix::<T>::zeros(nw, nx);
    let e_cols = n - p;
    g.view_mut((0, layout.yh(0) + e_cols), (nw, p)).copy_from(&lift.lue);
    g.view_mut((0, layout.ypb(0) + e_cols), (nw, p)).copy_from(&(-&lift.lue));
    {
        let mut past = g.view_mut((0, layout.ypb(0)), (nw, (d + 1) * n));
        past += &lift.luy;
    }
    let la_pc = &lift.la * &basis.psit_pc;
    g.view_mut((0, layout.gamma()), (nw, n_p)).copy_from(&la_pc);
    g.column_mut(layout.bias()).copy_from(&lift.lu1);

    let mut a = DMatrix::<T>::zeros(nx, nx);
    for k in 0..d {
        for i in 0..n {
            a[(layout.yh(k) + i, layout.yh(k + 1) + i)] = T::one();
            a[(layout.ypb(k) + i, layout.ypb(k + 1) + i)] = T::one();
        }
    }
    a.view_mut((layout.yh(d), 0), (nw, nx)).copy_from(&g);
    a.view_mut((layout.ypb(d), layout.gamma()), (nw, n_p)).copy_from(&basis.psit_pc);
    // gamma_P shift register: the new register is the last n_p entries of
    // [gamma_P; first m entries of gamma_C].
    let mc = basis.n_commit();
    let mut b = DMatrix::<T>::zeros(nx, n_c);
    for i in 0..n_p {
        let src = i + mc;
        if src < n_p {
            a[(layout.gamma() + i, layout.gamma() + src)] = T::one();
        } else {
            b[(layout.gamma() + i, src - n_p)] = T::one();
        }
    }
    let la_c = &lift.la * &basis.psit_c;
    b.view_mut((layout.yh(d), 0), (nw, n_c)).copy_from(&la_c);
    b.view_mut((layout.ypb(d), 0), (nw, n_c)).copy_from(&basis.psit_c);

    let k = -(m * &g);
    Ok(ClosedLoopSystem {
        layout,
        a,
        b,
        k,
        m: m.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusMethod {
    Krylov,
    Dense,
    /// Neither solver converged; the radius is reported as infinite.
    Failed,
}

#[derive(Debug, Clone)]
pub struct SpectralEstimate<T: Real> {
    pub radius: T,
    pub method: RadiusMethod,
    /// Warm start for the next Krylov estimate (reduced coordinates).
    pub vector: Option<DVector<T>>,
}

/// Spectral radius of `A + B K`.
///
/// Indices that cannot feed back (the newest batch slots, the bias and the
/// parts of old batches outside the regression's reach) only add zero
/// eigenvalues and are deflated first. A restarted Arnoldi estimate runs on
/// the reduced matrix; the dense Schur path is the fallback.
pub fn spectral_radius<T: Real>(
    system: &ClosedLoopSystem<T>,
    warm_start: Option<&DVector<T>>,
    decision_levels: &[T],
) -> SpectralEstimate<T> {
    radius_of(&deflate_zero_columns(&system.state_matrix()), warm_start, decision_levels)
}

/// Krylov estimates closer than this to a decision level are re-checked densely.
pub const KRYLOV_CONFIRM_BAND: f64 = 1e-3;

/// Below this size the dense eigensolver is cheaper than restarted Arnoldi.
pub const DENSE_MAX_DIM: usize = 256;

/// Principal submatrix left after repeatedly removing indices whose column
/// is zero within the remaining rows. Each removal only drops zero
/// eigenvalues (the matrix is block triangular in that ordering).
pub fn deflate_zero_columns<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let mut keep: Vec<usize> = (0..m.ncols()).collect();
    loop {
        let next: Vec<usize> = keep
            .iter()
            .copied()
            .filter(|&c| keep.iter().any(|&r| m[(r, c)] != T::zero()))
            .collect();
        if next.len() == keep.len() {
            break;
        }
        keep = next;
    }
    m.select_rows(&keep).select_columns(&keep)
}

/// Spectral radius of a square matrix: restarted Arnoldi first, then dense.
pub fn radius_of<T: Real>(
    m: &DMatrix<T>,
    warm_start: Option<&DVector<T>>,
    decision_levels: &[T],
) -> SpectralEstimate<T> {
    let krylov = if m.nrows() > DENSE_MAX_DIM {
        linalg::arnoldi_radius(m, warm_start, ArnoldiOptions::default())
    } else {
        None
    };
    if let Some(est) = krylov {
        let band = T::lit(KRYLOV_CONFIRM_BAND);
        if decision_levels.iter().any(|&l| (est.radius - l).abs() < band) {
            if let Some(r) = linalg::spectral_radius_dense(m) {
                return SpectralEstimate {
                    radius: r,
                    method: RadiusMethod::Dense,
                    vector: Some(est.vector),
                };
            }
        }
        return SpectralEstimate {
            radius: est.radius,
            method: RadiusMethod::Krylov,
            vector: Some(est.vector),
        };
    }
    match linalg::spectral_radius_dense(m) {
        Some(r) => SpectralEstimate {
            radius: r,
            method: RadiusMethod::Dense,
            vector: None,
        },
        None => SpectralEstimate {
            radius: T::lit(f64::INFINITY),
            method: RadiusMethod::Failed,
            vector: None,
        },
    }
}

/// Dense reference radius of `A + B K` without deflation.
pub fn spectral_radius_reference<T: Real>(system: &ClosedLoopSystem<T>) -> Option<T> {
    linalg::spectral_radius_dense(&system.state_matrix())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Warning,
    Alarm,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Warning => "warning",
            Verdict::Alarm => "alarm",
        }
    }
}

/// Alarm at or above 1, warning at or above `threshold`. Non-finite radii
/// are alarms.
pub fn check_stability<T: Real>(radius: T, threshold: T) -> Verdict {
    if !radius.is_finite() || radius >= T::one() {
        Verdict::Alarm
    } else if radius >= threshold {
        Verdict::Warning
    } else {
        Verdict::Stable
    }
}

/// Smallest scale in `[lo, hi]` at which `radius(scale)` reaches 1, by
/// bisection to `tol`. Requires `radius(lo) < 1 <= radius(hi)`; returns
/// `None` when the bracket does not straddle 1.
pub fn critical_scale<T, F>(mut radius: F, lo: T, hi: T, tol: T) -> Result<Option<T>>
where
    T: Real,
    F: FnMut(T) -> Result<T>,
{
    let (mut lo, mut hi) = (lo, hi);
    if radius(lo)? >= T::one() || radius(hi)? < T::one() {
        return Ok(None);
    }
    while hi - lo > tol {
        let mid = (lo + hi) * T::lit(0.5);
        if radius(mid)? >= T::one() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}
