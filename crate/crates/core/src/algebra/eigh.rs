//! Hermitian eigenproblem by cyclic complex Jacobi rotations.

use num_complex::Complex;

use super::{AlgebraError, Matrix, Real};

#[derive(Clone, Debug)]
pub struct HermitianEigen<T> {
    /// Ascending.
    pub eigenvalues: Vec<T>,
    /// Orthonormal eigenvectors as columns, in eigenvalue order.
    pub eigenvectors: Matrix<T>,
}

/// Eigendecomposition of the Hermitian part of `m`.
pub fn eigh<T: Real>(m: &Matrix<T>) -> Result<HermitianEigen<T>, AlgebraError> {
    let n = m.require_square()?;
    let mut a = m.hermitian_part();
    let mut v = Matrix::identity(n);
    let scale = a.norm_fro();
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let off = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .fold(T::zero(), |acc, (i, j)| acc + a[(i, j)].norm_sqr())
            .sqrt();
        if off <= T::epsilon() * scale || off == T::zero() {
            return Ok(sorted(a, v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag == T::zero() {
                    continue;
                }
                // Reduce to a real symmetric 2x2 problem with phase e^{iφ} = apq/|apq|.
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (two * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let cs = T::one() / (t * t + T::one()).sqrt();
                let sn = t * cs;
                // Rotation: columns p,q of J: J[p,p]=c, J[q,p]=-s·conj(phase), J[p,q]=s·phase, J[q,q]=c
                let jpq = phase * sn;
                let jqp = -phase.conj() * sn;
                for k in 0..n {
                    let x = a[(k, p)];
                    let y = a[(k, q)];
                    a[(k, p)] = x * cs + y * jqp;
                    a[(k, q)] = x * jpq + y * cs;
                }
                for k in 0..n {
                    let x = a[(p, k)];
                    let y = a[(q, k)];
                    a[(p, k)] = x * cs + y * jqp.conj();
                    a[(q, k)] = x * jpq.conj() + y * cs;
                }
                a[(p, q)] = Complex::new(T::zero(), T::zero());
                a[(q, p)] = Complex::new(T::zero(), T::zero());
                for k in 0..n {
                    let x = v[(k, p)];
                    let y = v[(k, q)];
                    v[(k, p)] = x * cs + y * jqp;
                    v[(k, q)] = x * jpq + y * cs;
                }
            }
        }
    }
    Err(AlgebraError::NoConvergence)
}

fn sorted<T: Real>(a: Matrix<T>, v: Matrix<T>) -> HermitianEigen<T> {
    let n = a.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].re.partial_cmp(&a[(y, y)].re).unwrap_or(std::cmp::Ordering::Equal));
    HermitianEigen {
        eigenvalues: order.iter().map(|&k| a[(k, k)].re).collect(),
        eigenvectors: Matrix::from_fn(n, n, |i, j| v[(i, order[j])]),
    }
}
