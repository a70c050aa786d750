//! Dense linear-algebra helpers: SVD pseudoinverse, eigenvalue-based spectral
//! radius and a power-iteration estimate for large closed-loop matrices.

use nalgebra::{Complex, DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

/// Moore-Penrose pseudoinverse together with the singular values it was
/// built from.
#[derive(Debug, Clone)]
pub struct PseudoInverse<T: Real> {
    pub matrix: DMatrix<T>,
    pub singular_values: Vec<T>,
    /// Number of singular values kept (above `rcond * sigma_max`).
    pub rank: usize,
}

impl<T: Real> PseudoInverse<T> {
    pub fn condition_number(&self) -> T {
        condition_from(&self.singular_values)
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.singular_values.len()
    }
}

fn condition_from<T: Real>(sv: &[T]) -> T {
    let max = sv.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
    let min = sv.iter().copied().fold(max, |a, b| if b < a { b } else { a });
    if min <= T::zero() {
        T::max_value().unwrap_or_else(|| T::lit(f64::MAX))
    } else {
        max / min
    }
}

/// Singular values of `m`, largest first.
pub fn singular_values<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut sv: Vec<T> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Pseudoinverse via SVD, truncating singular values below
/// `rcond * sigma_max`.
pub fn pseudo_inverse<T: Real>(m: &DMatrix<T>, rcond: T) -> PseudoInverse<T> {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sv: Vec<T> = svd.singular_values.iter().copied().collect();
    let sigma_max = sv.iter().copied().fold(T::zero(), |a, b| if b > a { b } else { a });
    let cutoff = rcond * sigma_max;

    let mut pinv = DMatrix::<T>::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in sv.iter().enumerate() {
        if s > cutoff && s > T::zero() {
            rank += 1;
            let inv = T::one() / s;
            // pinv += v_i * inv * u_i^T
            let v_i = v_t.row(i).transpose();
            let u_i = u.column(i);
            pinv.ger(inv, &v_i, &u_i, T::one());
        }
    }
    let mut sorted = sv;
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    PseudoInverse {
        matrix: pinv,
        singular_values: sorted,
        rank,
    }
}

/// Largest eigenvalue modulus from a real Schur decomposition. `None` when
/// the QR iteration does not converge.
pub fn spectral_radius_dense<T: Real>(m: &DMatrix<T>) -> Option<T> {
    assert!(m.is_square(), "spectral radius of a non-square matrix");
    let n = m.nrows();
    if n == 0 {
        return Some(T::zero());
    }
    if n == 1 {
        return Some(m[(0, 0)].magnitude());
    }
    let radius = schur_eigenvalues(m)?
        .iter()
        .map(|z| cabs(*z))
        .fold(T::zero(), |a, b| if b > a { b } else { a });
    Some(radius)
}

/// Complex eigenvalues (real, imaginary) of a small dense matrix.
pub fn eigenvalues<T: Real>(m: &DMatrix<T>) -> Option<Vec<(T, T)>> {
    let n = m.nrows();
    if n == 0 {
        return Some(Vec::new());
    }
    if n == 1 {
        return Some(vec![(m[(0, 0)], T::zero())]);
    }
    Some(schur_eigenvalues(m)?.iter().map(|z| (z.re, z.im)).collect())
}

/// Eigenvalues from the real Schur form. Unshifted QR stalls on some
/// structured matrices (a pure shift is the classic case), so a failed
/// attempt is retried on a similarity transform by a fixed pseudo-random
/// orthogonal matrix.
fn schur_eigenvalues<T: Real>(m: &DMatrix<T>) -> Option<Vec<Complex<T>>> {
    let n = m.nrows();
    let iters = 100 * n.max(10);
    if let Some(schur) = Schur::try_new(m.clone(), T::default_epsilon(), iters) {
        return Some(schur.complex_eigenvalues().iter().copied().collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let g = DMatrix::<T>::from_fn(n, n, |_, _| T::lit(rng.random_range(-1.0..1.0)));
    let q = g.qr().q();
    let conj = q.transpose() * m * &q;
    let schur = Schur::try_new(conj, T::default_epsilon(), iters)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

#[derive(Debug, Clone, Copy)]
pub struct PowerIterationOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PowerIterationOptions {
    fn default() -> Self {
        Self {
            max_iterations: 3000,
            tolerance: 1e-11,
        }
    }
}

/// Outcome of the power-iteration estimate.
#[derive(Debug, Clone)]
pub struct PowerEstimate<T: Real> {
    pub radius: T,
    pub iterations: usize,
    /// Final normalized iterate, reusable as a warm start.
    pub vector: DVector<T>,
}

/// Dominant eigenvalue modulus by power iteration.
///
/// A real dominant eigenvalue makes consecutive iterates collinear; a
/// dominant complex pair makes three consecutive iterates satisfy a
/// two-term recurrence `x2 = c1 x1 + c0 x0`, whose characteristic roots are
/// the pair. Both fits are tried every step. Returns `None` when neither
/// settles within the iteration budget.
pub fn power_iteration_radius<T: Real>(
    m: &DMatrix<T>,
    start: Option<&DVector<T>>,
    opts: PowerIterationOptions,
) -> Option<PowerEstimate<T>> {
    let n = m.nrows();
    if n == 0 {
        return Some(PowerEstimate {
            radius: T::zero(),
            iterations: 0,
            vector: DVector::zeros(0),
        });
    }
    let tol = T::lit(opts.tolerance);
    let mut x0 = match start {
        Some(v) if v.len() == n && v.norm() > T::zero() => v.normalize(),
        _ => {
            // Deterministic, not aligned with any coordinate axis.
            DVector::from_fn(n, |i, _| T::lit(1.0 + ((i * 7919) % 97) as f64 / 97.0)).normalize()
        }
    };
    let mut prev: Option<T> = None;
    let mut stable_steps = 0;
    let mut x1 = m * &x0;
    for it in 0..opts.max_iterations {
        let n1 = x1.norm();
        if n1 == T::zero() {
            return Some(PowerEstimate {
                radius: T::zero(),
                iterations: it + 1,
                vector: x0,
            });
        }
        let x2 = m * &x1;

        // Real dominant eigenvalue: x1 = lambda x0.
        let lambda = x1.dot(&x0);
        let res_real = (&x1 - &x0 * lambda).norm() / n1;

        // Complex pair: least-squares fit of x2 = c1 x1 + c0 x0.
        let g00 = x0.dot(&x0);
        let g01 = x0.dot(&x1);
        let g11 = x1.dot(&x1);
        let r0 = x0.dot(&x2);
        let r1 = x1.dot(&x2);
        let det = g11 * g00 - g01 * g01;
        let mut estimate = None;
        if res_real < tol.sqrt() {
            estimate = Some((lambda.magnitude(), res_real));
        }
        if det > T::default_epsilon() * g11 * g00 {
            let c1 = (r1 * g00 - r0 * g01) / det;
            let c0 = (r0 * g11 - r1 * g01) / det;
            let res_pair = (&x2 - &x1 * c1 - &x0 * c0).norm() / x2.norm().max(T::lit(f64::MIN_POSITIVE));
            // roots of z^2 - c1 z - c0
            let disc = c1 * c1 + T::lit(4.0) * c0;
            let radius = if disc >= T::zero() {
                let s = disc.sqrt();
                ((c1 + s) / T::lit(2.0))
                    .magnitude()
                    .max(((c1 - s) / T::lit(2.0)).magnitude())
            } else {
                (-c0).magnitude().sqrt()
            };
            match estimate {
                Some((_, r)) if r <= res_pair => {}
                _ if res_pair < tol.sqrt() => estimate = Some((radius, res_pair)),
                _ => {}
            }
        }

        if let Some((radius, _)) = estimate {
            if let Some(p) = prev {
                if (radius - p).magnitude() <= tol * radius.max(T::one()) {
                    stable_steps += 1;
                    if stable_steps >= 3 {
                        return Some(PowerEstimate {
                            radius,
                            iterations: it + 1,
                            vector: x1 / n1,
                        });
                    }
                } else {
                    stable_steps = 0;
                }
            }
            prev = Some(radius);
        } else {
            prev = None;
            stable_steps = 0;
        }
        x0 = x1 / n1;
        x1 = x2 / n1;
    }
    None
}

#[derive(Debug, Clone, Copy)]
pub struct ArnoldiOptions {
    /// Krylov subspace dimension per cycle.
    pub krylov_dim: usize,
    pub max_restarts: usize,
    /// Relative residual `|A x - theta x| / |theta|` accepted as converged.
    pub tolerance: f64,
}

impl Default for ArnoldiOptions {
    fn default() -> Self {
        Self {
            krylov_dim: 60,
            max_restarts: 15,
            tolerance: 1e-8,
        }
    }
}

fn cabs<T: Real>(z: Complex<T>) -> T {
    (z.re * z.re + z.im * z.im).sqrt()
}

/// Eigenvector of a small matrix for the eigenvalue `theta` by two steps of
/// shifted inverse iteration in complex arithmetic.
fn ritz_vector<T: Real>(h: &DMatrix<T>, theta: Complex<T>) -> Option<DVector<Complex<T>>> {
    let k = h.nrows();
    let eps = T::lit(1e-10) * (cabs(theta) + T::one());
    let shift = theta + Complex::new(eps, eps);
    let mut m = DMatrix::<Complex<T>>::from_fn(k, k, |r, c| Complex::new(h[(r, c)], T::zero()));
    for i in 0..k {
        m[(i, i)] -= shift;
    }
    let lu = m.lu();
    let mut y = DVector::<Complex<T>>::from_element(k, Complex::new(T::one(), T::zero()));
    for _ in 0..2 {
        y = lu.solve(&y)?;
        let norm = y.norm();
        if !(norm.is_finite()) || norm == T::zero() {
            return None;
        }
        y /= Complex::new(norm, T::zero());
    }
    Some(y)
}

/// Dominant eigenvalue modulus by explicitly restarted Arnoldi iteration.
///
/// Each cycle builds a Krylov basis of dimension `krylov_dim`, takes the
/// Ritz values of the Hessenberg matrix, and restarts from a combination of
/// the leading Ritz vectors. Converges when the Ritz residual of the largest
/// Ritz value falls below the tolerance. `None` if it does not.
pub fn arnoldi_radius<T: Real>(
    m: &DMatrix<T>,
    start: Option<&DVector<T>>,
    opts: ArnoldiOptions,
) -> Option<PowerEstimate<T>> {
    let n = m.nrows();
    if n <= opts.krylov_dim.max(2) {
        return spectral_radius_dense(m).map(|radius| PowerEstimate {
            radius,
            iterations: 0,
            vector: DVector::zeros(n),
        });
    }
    let k = opts.krylov_dim;
    let mut v0 = match start {
        Some(v) if v.len() == n && v.norm() > T::zero() => v.normalize(),
        _ => DVector::from_fn(n, |i, _| T::lit(1.0 + ((i * 7919) % 97) as f64 / 97.0)).normalize(),
    };
    let tol = T::lit(opts.tolerance);
    let mut matvecs = 0;
    for _ in 0..opts.max_restarts {
        let mut basis: Vec<DVector<T>> = Vec::with_capacity(k + 1);
        let mut h = DMatrix::<T>::zeros(k + 1, k);
        basis.push(v0.clone());
        let mut dim = k;
        let mut invariant = false;
        for j in 0..k {
            let mut w = m * &basis[j];
            matvecs += 1;
            // two passes of Gram-Schmidt
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = b.dot(&w);
                    h[(i, j)] += c;
                    w.axpy(-c, b, T::one());
                }
            }
            let beta = w.norm();
            h[(j + 1, j)] = beta;
            let scale = h.column(j).norm();
            if beta <= T::lit(1e-14) * scale.max(T::lit(f64::MIN_POSITIVE)) {
                dim = j + 1;
                invariant = true;
                break;
            }
            basis.push(w / beta);
        }
        let hk = h.view((0, 0), (dim, dim)).into_owned();
        let schur = Schur::try_new(hk.clone(), T::default_epsilon(), 100 * dim.max(10))?;
        let mut ritz: Vec<Complex<T>> = schur.complex_eigenvalues().iter().copied().collect();
        ritz.sort_by(|a, b| cabs(*b).partial_cmp(&cabs(*a)).unwrap_or(std::cmp::Ordering::Equal));
        let theta = ritz[0];
        let radius = cabs(theta);
        if invariant || radius == T::zero() {
            return Some(PowerEstimate {
                radius,
                iterations: matvecs,
                vector: v0,
            });
        }
        let beta = h[(dim, dim - 1)];
        // restart from the leading Ritz vectors (one per conjugate pair)
        let mut next = DVector::<T>::zeros(n);
        let mut converged = false;
        let mut taken = 0;
        for (idx, th) in ritz.iter().enumerate() {
            if taken >= 4 {
                break;
            }
            let mirrored = ritz
                .iter()
                .take(idx)
                .any(|o| cabs(*o - th.conj()) <= T::lit(1e-12) * radius);
            if th.im < T::zero() && mirrored {
                continue;
            }
            let y = ritz_vector(&hk, *th)?;
            if idx == 0 {
                let resid = beta * cabs(y[dim - 1]);
                converged = resid <= tol * radius;
            }
            let mut x = DVector::<T>::zeros(n);
            for (i, b) in basis.iter().take(dim).enumerate() {
                x.axpy(y[i].re + y[i].im, b, T::one());
            }
            let norm = x.norm();
            if norm > T::zero() {
                next.axpy(T::one() / norm, &x, T::one());
            }
            taken += 1;
        }
        if converged {
            return Some(PowerEstimate {
                radius,
                iterations: matvecs,
                vector: next.normalize(),
            });
        }
        let norm = next.norm();
        if !(norm > T::zero()) || !norm.is_finite() {
            return None;
        }
        v0 = next / norm;
    }
    None
}
