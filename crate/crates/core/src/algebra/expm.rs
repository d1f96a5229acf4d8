//! Matrix exponential by scaling and squaring with a degree-13 Padé approximant.

use super::{AlgebraError, Lu, Matrix, Real};

// Padé (13,13) numerator coefficients.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the (13,13) approximant meets unit roundoff in f64.
const THETA13: f64 = 5.371920351148152;

/// `e^m`. Fails with `AccuracyNotMet` when the Padé denominator is too
/// ill-conditioned for the result to be trusted at relative accuracy 1e-10.
pub fn expm<T: Real>(m: &Matrix<T>) -> Result<Matrix<T>, AlgebraError> {
    let n = m.require_square()?;
    if !m.is_finite() {
        return Err(AlgebraError::NonFinite { row: 0, col: 0 });
    }
    let norm = m.norm_one();
    if norm == T::zero() {
        return Ok(Matrix::identity(n));
    }
    let ratio = (norm / T::lit(THETA13)).to_f64().unwrap_or(f64::INFINITY);
    let squarings = if ratio > 1.0 { ratio.log2().ceil() as i32 } else { 0 };
    let a = m.scale_real(T::lit(2f64.powi(-squarings)));

    let ident = Matrix::identity(n);
    let b = |k: usize| T::lit(PADE13[k]);
    let a2 = a.matmul(&a);
    let a4 = a2.matmul(&a2);
    let a6 = a4.matmul(&a2);

    let lin = |terms: &[(&Matrix<T>, usize)]| {
        let mut acc = Matrix::zeros(n, n);
        for (mat, k) in terms {
            acc += &mat.scale_real(b(*k));
        }
        acc
    };
    let u_inner = lin(&[(&a6, 13), (&a4, 11), (&a2, 9)]);
    let u = a.matmul(&(&a6.matmul(&u_inner) + &lin(&[(&a6, 7), (&a4, 5), (&a2, 3), (&ident, 1)])));
    let v_inner = lin(&[(&a6, 12), (&a4, 10), (&a2, 8)]);
    let v = &a6.matmul(&v_inner) + &lin(&[(&a6, 6), (&a4, 4), (&a2, 2), (&ident, 0)]);

    let q = &v - &u;
    let p = &v + &u;
    let lu = Lu::new(&q).map_err(|_| AlgebraError::AccuracyNotMet {
        estimate: f64::INFINITY,
    })?;
    let q_inv = lu.inverse();
    // Rounding in the solve is amplified by cond(Q); with scaled norm ≤ θ13 this stays O(1).
    let cond = (q.norm_one() * q_inv.norm_one()).to_f64().unwrap_or(f64::INFINITY);
    let estimate = cond * T::epsilon().to_f64().unwrap_or(1.0);
    if !(estimate <= T::tol(1e-10).to_f64().unwrap_or(1e-10)) {
        return Err(AlgebraError::AccuracyNotMet { estimate });
    }
    let mut r = q_inv.matmul(&p);
    for _ in 0..squarings {
        r = r.matmul(&r);
    }
    if !r.is_finite() {
        return Err(AlgebraError::AccuracyNotMet {
            estimate: f64::INFINITY,
        });
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{c, eig, Lu};
    use super::*;
    use num_complex::Complex;

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(expm(&Matrix::<f64>::zeros(4, 4)).unwrap(), Matrix::identity(4));
    }

    #[test]
    fn diagonal_case() {
        let d = [c(0.5, 0.0), c(-2.0, 1.0), c(3.0, -0.25)];
        let e = expm(&Matrix::<f64>::from_diagonal(&d)).unwrap();
        for (i, z) in d.iter().enumerate() {
            assert!((e[(i, i)] - z.exp()).norm() <= 1e-12 * z.exp().norm());
        }
    }

    #[test]
    fn nilpotent_series_terminates() {
        let m = Matrix::<f64>::from_real(2, 2, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        let want = Matrix::from_real(2, 2, &[1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(expm(&m).unwrap().max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn rejects_non_square() {
        assert!(matches!(
            expm(&Matrix::<f64>::zeros(2, 3)),
            Err(AlgebraError::NonSquare { .. })
        ));
    }

    #[test]
    fn inverse_pair_multiplies_to_identity() {
        let mut r = rng(21);
        for _ in 0..10 {
            let mut m = random_matrix(&mut r, 9, 9, 1.0);
            let s = 10.0 / m.norm_one();
            m = m.scale_real(s);
            let prod = expm(&m).unwrap().matmul(&expm(&-m).unwrap());
            assert!(prod.max_abs_diff(&Matrix::identity(9)) < 1e-8);
        }
    }

    #[test]
    fn agrees_with_eigen_reconstruction() {
        let mut r = rng(22);
        for _ in 0..5 {
            let m = random_matrix(&mut r, 9, 9, 0.8);
            let dec = eig(&m).unwrap();
            let v = dec.right_eigenvectors();
            let expd: Vec<Complex<f64>> = dec.eigenvalues().iter().map(|z| z.exp()).collect();
            let recon = v
                .matmul(&Matrix::from_diagonal(&expd))
                .matmul(&Lu::new(v).unwrap().inverse());
            let e = expm(&m).unwrap();
            assert!(e.max_abs_diff(&recon) <= 1e-7 * e.max_abs());
        }
    }

    #[test]
    fn large_norm_matches_scalar_exponential() {
        // 1000·(rotation generator) keeps the exponential bounded.
        let m = Matrix::<f64>::from_real(2, 2, &[0.0, -1000.0, 1000.0, 0.0]).unwrap();
        let e = expm(&m).unwrap();
        let (s, co) = 1000f64.sin_cos();
        let want = Matrix::from_real(2, 2, &[co, -s, s, co]).unwrap();
        assert!(e.max_abs_diff(&want) < 1e-10);
    }

    #[test]
    fn works_in_single_precision() {
        let m = Matrix::<f32>::from_real(2, 2, &[0.0, 1.0, -1.0, 0.0]).unwrap();
        let e = expm(&m).unwrap();
        assert!((e[(0, 0)].re - 1f32.cos()).abs() < 1e-5);
        assert!((e[(1, 0)].re + 1f32.sin()).abs() < 1e-5);
    }
}
