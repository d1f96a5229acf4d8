use num_complex::Complex;

use super::{AlgebraError, Matrix, Real};

/// LU factorization with partial pivoting, `P·A = L·U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    n: usize,
    factors: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self, AlgebraError> {
        let n = a.require_square()?;
        let mut f = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs();
        let tiny = scale * T::epsilon() * T::lit(n as f64);
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, f[(i, k)].norm()))
                .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= tiny || pmax == T::zero() {
                return Err(AlgebraError::Singular);
            }
            if p != k {
                for j in 0..n {
                    let tmp = f[(k, j)];
                    f[(k, j)] = f[(p, j)];
                    f[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let pivot = f[(k, k)];
            for i in k + 1..n {
                let m = f[(i, k)] / pivot;
                f[(i, k)] = m;
                if m.re == T::zero() && m.im == T::zero() {
                    continue;
                }
                for j in k + 1..n {
                    let u = f[(k, j)];
                    f[(i, j)] = f[(i, j)] - m * u;
                }
            }
        }
        Ok(Self { n, factors: f, perm })
    }

    pub fn solve_vec(&self, b: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x: Vec<Complex<T>> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s = s - self.factors[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s = s - self.factors[(i, k)] * x[k];
            }
            x[i] = s / self.factors[(i, i)];
        }
        x
    }

    /// Solves `a x = b` for the matrix `a` this factorization came from, then
    /// refines `x` with residuals accumulated in double-word arithmetic.
    pub fn solve_refined(&self, a: &Matrix<T>, b: &[Complex<T>], sweeps: usize) -> Vec<Complex<T>> {
        let mut x = self.solve_vec(b);
        for _ in 0..sweeps {
            let r = residual(a, &x, b);
            let d = self.solve_vec(&r);
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi = *xi + *di;
            }
        }
        x
    }

    pub fn solve(&self, b: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let col = self.solve_vec(&b.column_vec(j));
            out.set_column(j, &col);
        }
        out
    }

    pub fn inverse(&self) -> Matrix<T> {
        self.solve(&Matrix::identity(self.n))
    }
}

fn two_sum<T: Real>(a: T, b: T) -> (T, T) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod<T: Real>(a: T, b: T) -> (T, T) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Running sum carried as an unevaluated pair `hi + lo`.
#[derive(Clone, Copy)]
struct Accum<T> {
    hi: T,
    lo: T,
}

impl<T: Real> Accum<T> {
    fn new(x: T) -> Self {
        Self { hi: x, lo: T::zero() }
    }

    fn add(&mut self, x: T) {
        let (s, e) = two_sum(self.hi, x);
        self.hi = s;
        self.lo = self.lo + e;
    }

    fn add_product(&mut self, a: T, b: T) {
        let (p, e) = two_prod(a, b);
        self.add(p);
        self.lo = self.lo + e;
    }

    fn value(self) -> T {
        self.hi + self.lo
    }
}

/// `b − a x` with each entry accumulated in double-word arithmetic.
pub fn residual<T: Real>(a: &Matrix<T>, x: &[Complex<T>], b: &[Complex<T>]) -> Vec<Complex<T>> {
    (0..a.rows())
        .map(|i| {
            let mut re = Accum::new(b[i].re);
            let mut im = Accum::new(b[i].im);
            for (k, xk) in x.iter().enumerate() {
                let aik = a[(i, k)];
                re.add_product(-aik.re, xk.re);
                re.add_product(aik.im, xk.im);
                im.add_product(-aik.re, xk.im);
                im.add_product(-aik.im, xk.re);
            }
            Complex::new(re.value(), im.value())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    #[test]
    fn solves_random_system() {
        let mut r = rng(11);
        let a = random_matrix(&mut r, 9, 9, 1.0);
        let x = random_matrix(&mut r, 9, 2, 1.0);
        let b = a.matmul(&x);
        let got = Lu::new(&a).unwrap().solve(&b);
        assert!(got.max_abs_diff(&x) < 1e-11);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = random_matrix(&mut rng(12), 12, 12, 1.0);
        let inv = Lu::new(&a).unwrap().inverse();
        assert!(a.matmul(&inv).max_abs_diff(&Matrix::identity(12)) < 1e-11);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Matrix::<f64>::from_real(2, 2, &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(Lu::new(&a), Err(AlgebraError::Singular)));
    }

    #[test]
    fn refinement_recovers_tiny_components() {
        // Graded system whose solution spans twelve orders of magnitude.
        let n = 6;
        let a = Matrix::from_fn(n, n, |i, j| {
            let g = 10f64.powi(-2 * j as i32);
            Complex::new(if i == j { 1.0 } else { 0.3 / (1.0 + (i + j) as f64) }, 0.1 * (i as f64 - j as f64)) * g
        });
        let x_true: Vec<Complex<f64>> = (0..n).map(|j| Complex::new(10f64.powi(2 * j as i32), 0.5)).collect();
        let b = a.apply(&x_true);
        let lu = Lu::new(&a).unwrap();
        let x = lu.solve_refined(&a, &b, 3);
        for (got, want) in x.iter().zip(&x_true) {
            assert!((got - want).norm() <= 1e-12 * want.norm(), "{got} vs {want}");
        }
        let r = residual(&a, &x, &b);
        assert!(r.iter().all(|z| z.norm() < 1e-14));
    }
}
