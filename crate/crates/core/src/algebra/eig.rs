//! General complex eigenproblem: Householder reduction to Hessenberg form,
//! shifted complex QR to Schur form, then triangular back-substitution.

use std::cmp::Ordering;

use num_complex::Complex;

use super::{AlgebraError, Lu, Matrix, Real};

/// Eigenvalues with right eigenvectors (columns, unit 2-norm) and the
/// biorthogonal left eigenvectors.
#[derive(Clone, Debug)]
pub struct EigenDecomposition<T> {
    eigenvalues: Vec<Complex<T>>,
    right: Matrix<T>,
    left: Matrix<T>,
    condition: T,
}

impl<T: Real> EigenDecomposition<T> {
    /// Sorted by descending real part, ties broken by descending imaginary part.
    pub fn eigenvalues(&self) -> &[Complex<T>] {
        &self.eigenvalues
    }

    /// Column `k` is the right eigenvector of eigenvalue `k`.
    pub fn right_eigenvectors(&self) -> &Matrix<T> {
        &self.right
    }

    /// `V⁻¹`: row `k` is the left eigenvector `w_k†` with `w_k† v_j = δ_kj`.
    pub fn left_eigenvectors(&self) -> &Matrix<T> {
        &self.left
    }

    /// 1-norm condition number of the eigenvector matrix.
    pub fn condition(&self) -> T {
        self.condition
    }

    /// Largest relative residual `‖M v − λ v‖ / (‖M‖·‖v‖)` over all pairs.
    pub fn max_residual(&self, m: &Matrix<T>) -> T {
        let scale = m.norm_fro().max(T::min_positive_value());
        (0..self.eigenvalues.len())
            .map(|k| {
                let v = self.right.column_vec(k);
                let mv = m.apply(&v);
                let vnorm = v.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
                let r = mv
                    .iter()
                    .zip(&v)
                    .fold(T::zero(), |a, (&x, &y)| a + (x - self.eigenvalues[k] * y).norm_sqr())
                    .sqrt();
                r / (scale * vnorm)
            })
            .fold(T::zero(), T::max)
    }
}

const CONDITION_LIMIT: f64 = 1e12;

/// Full eigendecomposition; `NearDefective` when the eigenvector matrix has
/// condition number above 1e12.
pub fn eig<T: Real>(m: &Matrix<T>) -> Result<EigenDecomposition<T>, AlgebraError> {
    let n = m.require_square()?;
    let (t, z) = schur(m, true)?;
    let z = z.expect("requested Schur vectors");
    let y = triangular_eigenvectors(&t);
    let mut v = z.matmul(&y);
    for k in 0..n {
        let col = v.column_vec(k);
        let norm = col.iter().fold(T::zero(), |a, x| a + x.norm_sqr()).sqrt();
        let col: Vec<_> = col.iter().map(|&x| x / norm).collect();
        v.set_column(k, &col);
    }
    let mut eigenvalues: Vec<Complex<T>> = (0..n).map(|i| t[(i, i)]).collect();

    let order = descending_order(&eigenvalues);
    eigenvalues = order.iter().map(|&k| eigenvalues[k]).collect();
    let v = Matrix::from_fn(n, n, |i, j| v[(i, order[j])]);

    let near_defective = |condition: f64| AlgebraError::NearDefective { condition };
    let left = Lu::new(&v)
        .map_err(|_| near_defective(f64::INFINITY))?
        .inverse();
    let condition = v.norm_one() * left.norm_one();
    let cond64 = condition.to_f64().unwrap_or(f64::INFINITY);
    if !(cond64 <= CONDITION_LIMIT) {
        return Err(near_defective(cond64));
    }
    Ok(EigenDecomposition {
        eigenvalues,
        right: v,
        left,
        condition,
    })
}

/// Eigenvalues only, sorted by descending real part.
pub fn eigenvalues<T: Real>(m: &Matrix<T>) -> Result<Vec<Complex<T>>, AlgebraError> {
    let n = m.require_square()?;
    let (t, _) = schur(m, false)?;
    let vals: Vec<Complex<T>> = (0..n).map(|i| t[(i, i)]).collect();
    Ok(descending_order(&vals).into_iter().map(|k| vals[k]).collect())
}

fn descending_order<T: Real>(vals: &[Complex<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (vals[a], vals[b]);
        y.re.partial_cmp(&x.re)
            .unwrap_or(Ordering::Equal)
            .then(y.im.partial_cmp(&x.im).unwrap_or(Ordering::Equal))
    });
    order
}

fn zero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Reduces `m` to upper Hessenberg form `H = Qᴴ m Q`.
fn hessenberg<T: Real>(m: &Matrix<T>, want_q: bool) -> (Matrix<T>, Option<Matrix<T>>) {
    let n = m.rows();
    let mut h = m.clone();
    let mut q = want_q.then(|| Matrix::identity(n));
    for k in 0..n.saturating_sub(2) {
        let mut v: Vec<Complex<T>> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let alpha = v.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
        if alpha == T::zero() {
            continue;
        }
        let x0 = v[0];
        let phase = if x0.norm() == T::zero() {
            Complex::new(T::one(), T::zero())
        } else {
            x0 / x0.norm()
        };
        v[0] = x0 + phase * alpha;
        let vnorm = v.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
        if vnorm == T::zero() {
            continue;
        }
        for z in &mut v {
            *z = *z / vnorm;
        }
        let two = T::lit(2.0);
        // H ← (I − 2vvᴴ) H
        for j in 0..n {
            let s = v
                .iter()
                .enumerate()
                .fold(zero::<T>(), |a, (r, vi)| a + vi.conj() * h[(k + 1 + r, j)]);
            for (r, vi) in v.iter().enumerate() {
                h[(k + 1 + r, j)] = h[(k + 1 + r, j)] - *vi * s * two;
            }
        }
        // H ← H (I − 2vvᴴ)
        for i in 0..n {
            let s = v
                .iter()
                .enumerate()
                .fold(zero::<T>(), |a, (r, vi)| a + h[(i, k + 1 + r)] * *vi);
            for (r, vi) in v.iter().enumerate() {
                h[(i, k + 1 + r)] = h[(i, k + 1 + r)] - s * vi.conj() * two;
            }
        }
        if let Some(q) = q.as_mut() {
            for i in 0..n {
                let s = v
                    .iter()
                    .enumerate()
                    .fold(zero::<T>(), |a, (r, vi)| a + q[(i, k + 1 + r)] * *vi);
                for (r, vi) in v.iter().enumerate() {
                    q[(i, k + 1 + r)] = q[(i, k + 1 + r)] - s * vi.conj() * two;
                }
            }
        }
        for i in k + 2..n {
            h[(i, k)] = zero();
        }
    }
    (h, q)
}

/// Complex Givens rotation `G = [[c, s], [−s̄, c]]` with `G·[a; b] = [r; 0]`.
fn givens<T: Real>(a: Complex<T>, b: Complex<T>) -> (T, Complex<T>) {
    let an = a.norm();
    let r = (an * an + b.norm_sqr()).sqrt();
    if r == T::zero() {
        return (T::one(), zero());
    }
    if an == T::zero() {
        return (T::zero(), Complex::new(T::one(), T::zero()));
    }
    let phase = a / an;
    (an / r, phase * b.conj() / r)
}

/// Schur decomposition `m = Z T Zᴴ`, `T` upper triangular.
fn schur<T: Real>(m: &Matrix<T>, want_z: bool) -> Result<(Matrix<T>, Option<Matrix<T>>), AlgebraError> {
    let n = m.rows();
    let (mut h, mut z) = hessenberg(m, want_z);
    if n <= 1 {
        return Ok((h, z));
    }
    let eps = T::epsilon();
    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    let max_total = 100 * n;
    let mut rots: Vec<(T, Complex<T>)> = Vec::with_capacity(n);
    while hi > 0 {
        // locate the start of the unreduced active block
        let mut lo = hi;
        while lo > 0 {
            let s = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            let s = if s == T::zero() { h.max_abs() } else { s };
            if h[(lo, lo - 1)].norm() <= eps * s {
                h[(lo, lo - 1)] = zero();
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > max_total {
            return Err(AlgebraError::NoConvergence);
        }

        let shift = if iter % 11 == 10 {
            // exceptional shift to break cycles
            h[(hi, hi)] + Complex::new(h[(hi, hi - 1)].norm() * T::lit(0.75), T::zero())
        } else {
            let a = h[(hi - 1, hi - 1)];
            let b = h[(hi - 1, hi)];
            let c = h[(hi, hi - 1)];
            let d = h[(hi, hi)];
            let half = T::lit(0.5);
            let mid = (a + d) * half;
            let disc = ((a - d) * (a - d) * T::lit(0.25) + b * c).sqrt();
            let (l1, l2) = (mid + disc, mid - disc);
            if (l1 - d).norm() <= (l2 - d).norm() {
                l1
            } else {
                l2
            }
        };

        for k in lo..=hi {
            h[(k, k)] = h[(k, k)] - shift;
        }
        rots.clear();
        for k in lo..hi {
            let (c, s) = givens(h[(k, k)], h[(k + 1, k)]);
            for j in k..n {
                let x = h[(k, j)];
                let y = h[(k + 1, j)];
                h[(k, j)] = x * c + s * y;
                h[(k + 1, j)] = -s.conj() * x + y * c;
            }
            rots.push((c, s));
        }
        for (idx, &(c, s)) in rots.iter().enumerate() {
            let k = lo + idx;
            let top = (k + 2).min(hi);
            for i in 0..=top {
                let x = h[(i, k)];
                let y = h[(i, k + 1)];
                h[(i, k)] = x * c + y * s.conj();
                h[(i, k + 1)] = -x * s + y * c;
            }
            if let Some(z) = z.as_mut() {
                for i in 0..n {
                    let x = z[(i, k)];
                    let y = z[(i, k + 1)];
                    z[(i, k)] = x * c + y * s.conj();
                    z[(i, k + 1)] = -x * s + y * c;
                }
            }
        }
        for k in lo..=hi {
            h[(k, k)] = h[(k, k)] + shift;
        }
    }
    for i in 0..n {
        for j in 0..i {
            h[(i, j)] = zero();
        }
    }
    Ok((h, z))
}

/// Eigenvectors of an upper triangular matrix (columns, unnormalized).
fn triangular_eigenvectors<T: Real>(t: &Matrix<T>) -> Matrix<T> {
    let n = t.rows();
    let small = t.max_abs().max(T::min_positive_value()) * T::epsilon();
    let mut y = Matrix::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut x = vec![zero::<T>(); k + 1];
        x[k] = Complex::new(T::one(), T::zero());
        for i in (0..k).rev() {
            let mut s = zero::<T>();
            for j in i + 1..=k {
                s = s + t[(i, j)] * x[j];
            }
            let mut d = t[(i, i)] - lambda;
            if d.norm() < small {
                d = Complex::new(small, T::zero());
            }
            x[i] = -s / d;
            // keep the partial solution bounded
            let big = x.iter().fold(T::zero(), |a, z| a.max(z.norm()));
            if big > T::lit(1e100) {
                let inv = T::one() / big;
                for z in &mut x {
                    *z = *z * inv;
                }
            }
        }
        for (i, &v) in x.iter().enumerate() {
            y[(i, k)] = v;
        }
    }
    y
}
