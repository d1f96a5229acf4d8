//! Operators for two resonantly driven three-level ladder atoms with a
//! Rydberg–Rydberg interaction between their upper levels.
//!
//! Units: ħ = 1 and every rate or coupling is expressed in units of the
//! lower-transition decay rate γ₁, so `gamma1` is always exactly 1.
//!
//! Pair basis ordering: `|k₁ k₂⟩ ↦ 3·(k₁−1) + (k₂−1)` with levels `k ∈ {1,2,3}`
//! (1 ground, 2 short-lived intermediate, 3 Rydberg).

use std::fmt;

use num_complex::Complex;
use thiserror::Error;

use crate::algebra::{kron, Matrix, Real};

pub const LEVELS: usize = 3;
pub const PAIR_DIM: usize = LEVELS * LEVELS;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("level {0} is outside 1..=3")]
    BadLevel(usize),
    #[error("atom index {0} is not 1 or 2")]
    BadAtom(usize),
    #[error("both Rabi frequencies vanish; the dark state is undefined")]
    DegenerateDrive,
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

/// Which of the two atoms an operator acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomIndex {
    One,
    Two,
}

impl AtomIndex {
    pub const BOTH: [AtomIndex; 2] = [AtomIndex::One, AtomIndex::Two];

    pub fn number(self) -> usize {
        match self {
            AtomIndex::One => 1,
            AtomIndex::Two => 2,
        }
    }

    pub fn other(self) -> Self {
        match self {
            AtomIndex::One => AtomIndex::Two,
            AtomIndex::Two => AtomIndex::One,
        }
    }
}

impl TryFrom<usize> for AtomIndex {
    type Error = ModelError;
    fn try_from(v: usize) -> Result<Self, ModelError> {
        match v {
            1 => Ok(AtomIndex::One),
            2 => Ok(AtomIndex::Two),
            other => Err(ModelError::BadAtom(other)),
        }
    }
}

impl fmt::Display for AtomIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Physical parameters in units of γ₁ (ħ = 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams<T> {
    pub omega1: Complex<T>,
    pub omega2: Complex<T>,
    pub v12: T,
    gamma1: T,
    pub gamma2: T,
    pub gamma_ph: T,
}

impl<T: Real> ModelParams<T> {
    pub fn new(
        omega1: Complex<T>,
        omega2: Complex<T>,
        v12: T,
        gamma2: T,
        gamma_ph: T,
    ) -> Result<Self, ModelError> {
        let p = Self {
            omega1,
            omega2,
            v12,
            gamma1: T::one(),
            gamma2,
            gamma_ph,
        };
        p.validate()?;
        Ok(p)
    }

    /// Real-valued drives, the convention used by all figure presets.
    pub fn real(omega1: f64, omega2: f64, v12: f64, gamma2: f64, gamma_ph: f64) -> Result<Self, ModelError> {
        Self::new(
            Complex::new(T::lit(omega1), T::zero()),
            Complex::new(T::lit(omega2), T::zero()),
            T::lit(v12),
            T::lit(gamma2),
            T::lit(gamma_ph),
        )
    }

    /// Ω₁ = 0.2, Ω₂ = 5, V₁₂ = 1, γ₂ = γ_ph = 1e-4.
    pub fn reference() -> Self {
        Self::real(0.2, 5.0, 1.0, 1e-4, 1e-4).expect("reference parameters are valid")
    }

    pub fn with_v12(mut self, v12: T) -> Self {
        self.v12 = v12;
        self
    }

    pub fn gamma1(&self) -> T {
        self.gamma1
    }

    /// Ω_R = √(|Ω₁|² + |Ω₂|²).
    pub fn rabi(&self) -> T {
        (self.omega1.norm_sqr() + self.omega2.norm_sqr()).sqrt()
    }

    /// Period 2π/Ω_R of the damped Rabi oscillations.
    pub fn rabi_period(&self) -> T {
        T::TAU() / self.rabi()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = |z: Complex<T>| z.re.is_finite() && z.im.is_finite();
        if !finite(self.omega1) || !finite(self.omega2) || !self.v12.is_finite() {
            return Err(ModelError::InvalidParameter {
                name: "drive",
                reason: "non-finite value".into(),
            });
        }
        if self.gamma1 != T::one() {
            return Err(ModelError::InvalidParameter {
                name: "gamma1",
                reason: "must be exactly 1 (unit of rates)".into(),
            });
        }
        for (name, g) in [("gamma2", self.gamma2), ("gamma_ph", self.gamma_ph)] {
            if !(g >= T::zero()) || !g.is_finite() {
                return Err(ModelError::InvalidParameter {
                    name,
                    reason: format!("must be a finite non-negative rate, got {g}"),
                });
            }
        }
        Ok(())
    }
}

/// A 9×9 operator on the pair Hilbert space with a descriptive label.
#[derive(Clone, PartialEq)]
pub struct PairOperator<T> {
    matrix: Matrix<T>,
    label: String,
}

impl<T: Real> PairOperator<T> {
    pub fn new(matrix: Matrix<T>, label: impl Into<String>) -> Result<Self, ModelError> {
        if matrix.rows() != PAIR_DIM || matrix.cols() != PAIR_DIM {
            return Err(ModelError::InvalidParameter {
                name: "matrix",
                reason: format!("pair operators are 9x9, got {}x{}", matrix.rows(), matrix.cols()),
            });
        }
        Ok(Self {
            matrix,
            label: label.into(),
        })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix::identity(PAIR_DIM),
            label: "I".into(),
        }
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
            label: format!("({})†", self.label),
        }
    }
}

impl<T: Real> fmt::Debug for PairOperator<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PairOperator({}) {:?}", self.label, self.matrix)
    }
}

/// Single-atom `|k⟩⟨l|` (3×3).
pub fn single_sigma<T: Real>(k: usize, l: usize) -> Result<Matrix<T>, ModelError> {
    for lvl in [k, l] {
        if !(1..=LEVELS).contains(&lvl) {
            return Err(ModelError::BadLevel(lvl));
        }
    }
    let mut m = Matrix::zeros(LEVELS, LEVELS);
    m[(k - 1, l - 1)] = Complex::new(T::one(), T::zero());
    Ok(m)
}

/// Lifts a single-atom operator onto atom `j` of the pair.
pub fn embed<T: Real>(j: AtomIndex, single: &Matrix<T>) -> Matrix<T> {
    let id = Matrix::identity(LEVELS);
    match j {
        AtomIndex::One => kron(single, &id),
        AtomIndex::Two => kron(&id, single),
    }
}

/// `σ_kl^(j) = |k⟩_j⟨l|` on the pair space.
pub fn sigma<T: Real>(j: AtomIndex, k: usize, l: usize) -> Result<PairOperator<T>, ModelError> {
    let s = single_sigma(k, l)?;
    Ok(PairOperator {
        matrix: embed(j, &s),
        label: format!("σ{k}{l}^({j})"),
    })
}

/// Shorthand for the 9×9 matrix of `σ_kl^(j)` with levels known to be valid.
pub(crate) fn sig<T: Real>(j: AtomIndex, k: usize, l: usize) -> Matrix<T> {
    sigma(j, k, l).expect("valid levels").into_matrix()
}

/// `Hⱼ = −½(Ω₁σ₂₁ + Ω₂σ₃₂ + h.c.)` on one atom (resonant driving, zero diagonal).
pub fn single_atom_hamiltonian<T: Real>(p: &ModelParams<T>) -> Matrix<T> {
    let half = T::lit(0.5);
    let mut h = Matrix::zeros(LEVELS, LEVELS);
    h[(1, 0)] = -p.omega1 * half;
    h[(0, 1)] = -p.omega1.conj() * half;
    h[(2, 1)] = -p.omega2 * half;
    h[(1, 2)] = -p.omega2.conj() * half;
    h
}

/// `H = H₁⊗I + I⊗H₂ + V₁₂ σ₃₃^(1) σ₃₃^(2)`.
pub fn pair_hamiltonian<T: Real>(p: &ModelParams<T>) -> PairOperator<T> {
    let h1 = single_atom_hamiltonian(p);
    let mut h = &embed(AtomIndex::One, &h1) + &embed(AtomIndex::Two, &h1);
    h[(PAIR_DIM - 1, PAIR_DIM - 1)] = h[(PAIR_DIM - 1, PAIR_DIM - 1)] + Complex::new(p.v12, T::zero());
    PairOperator {
        matrix: h,
        label: "H".into(),
    }
}

/// Dissipation channel kind, in the order used by [`jump_operators`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    /// `C₁ = √γ₁ σ₁₂`: photon on the lower transition.
    LowerDecay,
    /// `C₂ = √γ₂ σ₂₃`.
    UpperDecay,
    /// `C₃ = √γ_ph (σ₃₃ − σ₂₂ − σ₁₁)`.
    Dephasing,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::LowerDecay, Channel::UpperDecay, Channel::Dephasing];
}

/// Fixed channel ordering: `C₁^(1), C₂^(1), C₃^(1), C₁^(2), C₂^(2), C₃^(2)`.
pub fn channel_at(index: usize) -> Option<(AtomIndex, Channel)> {
    let atom = AtomIndex::BOTH.get(index / 3)?;
    Some((*atom, Channel::ALL[index % 3]))
}

/// The six jump operators in the fixed order of [`channel_at`].
pub fn jump_operators<T: Real>(p: &ModelParams<T>) -> Vec<PairOperator<T>> {
    let mut out = Vec::with_capacity(6);
    for j in AtomIndex::BOTH {
        let c1 = sig::<T>(j, 1, 2).scale_real(p.gamma1.sqrt());
        let c2 = sig::<T>(j, 2, 3).scale_real(p.gamma2.sqrt());
        let c3 = (&(&sig::<T>(j, 3, 3) - &sig::<T>(j, 2, 2)) - &sig::<T>(j, 1, 1)).scale_real(p.gamma_ph.sqrt());
        out.push(PairOperator { matrix: c1, label: format!("C1^({j})") });
        out.push(PairOperator { matrix: c2, label: format!("C2^({j})") });
        out.push(PairOperator { matrix: c3, label: format!("C3^({j})") });
    }
    out
}

/// The single-atom dark state `|D⟩ = (Ω₁|3⟩ − Ω₂*|1⟩)/Ω_R` and the product `|DD⟩`.
/// For real drives this is `(Ω₁|3⟩ − Ω₂|1⟩)/Ω_R`.
pub fn dark_state<T: Real>(p: &ModelParams<T>) -> Result<(Vec<Complex<T>>, Vec<Complex<T>>), ModelError> {
    let rabi = p.rabi();
    if !(rabi > T::zero()) {
        return Err(ModelError::DegenerateDrive);
    }
    let zero = Complex::new(T::zero(), T::zero());
    let d = vec![-p.omega2.conj() / rabi, zero, p.omega1 / rabi];
    let dd = d.iter().flat_map(|&a| d.iter().map(move |&b| a * b)).collect();
    Ok((d, dd))
}

/// Operator exchanging the two atoms, `|k₁k₂⟩ ↦ |k₂k₁⟩`.
pub fn swap<T: Real>() -> Matrix<T> {
    let mut s = Matrix::zeros(PAIR_DIM, PAIR_DIM);
    for a in 0..LEVELS {
        for b in 0..LEVELS {
            s[(LEVELS * b + a, LEVELS * a + b)] = Complex::new(T::one(), T::zero());
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{c, eigh};
    use proptest::prelude::*;

    fn atom(n: usize) -> AtomIndex {
        AtomIndex::try_from(n).unwrap()
    }

    #[test]
    fn sigma_trace_counts_spectator_identity() {
        let s = sigma::<f64>(AtomIndex::One, 2, 2).unwrap();
        assert_eq!(s.matrix().trace(), c(3.0, 0.0));
    }

    #[test]
    fn sigma_projector_algebra() {
        let a = sig::<f64>(AtomIndex::One, 1, 2);
        let b = sig::<f64>(AtomIndex::One, 2, 1);
        assert_eq!(a.matmul(&b), sig(AtomIndex::One, 1, 1));
    }

    #[test]
    fn double_rydberg_projector() {
        let p = sig::<f64>(AtomIndex::One, 3, 3).matmul(&sig(AtomIndex::Two, 3, 3));
        assert_eq!(p[(8, 8)], c(1.0, 0.0));
        assert_eq!(p.as_slice().iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn bad_levels_and_atoms() {
        assert_eq!(sigma::<f64>(AtomIndex::One, 0, 1).unwrap_err(), ModelError::BadLevel(0));
        assert_eq!(sigma::<f64>(AtomIndex::Two, 1, 4).unwrap_err(), ModelError::BadLevel(4));
        assert_eq!(AtomIndex::try_from(3).unwrap_err(), ModelError::BadAtom(3));
    }

    #[test]
    fn undriven_hamiltonian_vanishes() {
        let p = ModelParams::<f64>::real(0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(single_atom_hamiltonian(&p), Matrix::zeros(3, 3));
    }

    #[test]
    fn single_atom_spectrum() {
        let p = ModelParams::<f64>::reference();
        let h = single_atom_hamiltonian(&p);
        assert_eq!(h.hermiticity_residue(), 0.0);
        assert_eq!(h[(1, 0)], c(-0.1, 0.0));
        assert_eq!(h[(2, 1)], c(-2.5, 0.0));
        let half_rabi = (0.04f64 + 25.0).sqrt() / 2.0;
        let e = eigh(&h).unwrap().eigenvalues;
        assert!((e[0] + half_rabi).abs() < 1e-13);
        assert!(e[1].abs() < 1e-13);
        assert!((e[2] - half_rabi).abs() < 1e-13);
        assert!((half_rabi - 2.502).abs() < 1e-3);
    }

    #[test]
    fn pair_hamiltonian_structure() {
        let p = ModelParams::<f64>::reference();
        let h = pair_hamiltonian(&p);
        assert_eq!(h.matrix().hermiticity_residue(), 0.0);
        assert_eq!(h.matrix()[(8, 8)], c(1.0, 0.0));

        let free = p.with_v12(0.0);
        let hf = pair_hamiltonian(&free);
        let s = swap::<f64>();
        assert!(hf.matrix().commutes_with(&s, 1e-15));
    }

    #[test]
    fn dark_pair_energy_is_blockade_weighted() {
        let p = ModelParams::<f64>::reference();
        let (_, dd) = dark_state(&p).unwrap();
        let h = pair_hamiltonian(&p);
        let hdd = h.matrix().apply(&dd);
        let e: Complex<f64> = dd.iter().zip(&hdd).map(|(a, b)| a.conj() * b).sum();
        let want = (0.04f64 / 25.04).powi(2);
        assert!((e.re - want).abs() < 1e-15);
        assert!((e.re - 2.552e-6).abs() < 1e-9);
    }

    #[test]
    fn jump_operator_ordering_and_norms() {
        let p = ModelParams::<f64>::reference();
        let cs = jump_operators(&p);
        assert_eq!(cs.len(), 6);
        assert_eq!(channel_at(3), Some((AtomIndex::Two, Channel::LowerDecay)));
        assert_eq!(channel_at(6), None);
        let c1 = cs[0].matrix();
        assert_eq!(c1.adjoint().matmul(c1), sig(AtomIndex::One, 2, 2));

        let c3 = cs[2].matrix();
        assert_eq!(c3.hermiticity_residue(), 0.0);
        let e = eigh(c3).unwrap().eigenvalues;
        let r = 1e-4f64.sqrt();
        assert!((e[0] + r).abs() < 1e-15 && (e[8] - r).abs() < 1e-15);
    }

    #[test]
    fn only_lower_decay_without_upper_dissipation() {
        let p = ModelParams::<f64>::real(0.2, 5.0, 1.0, 0.0, 0.0).unwrap();
        let nonzero: Vec<usize> = jump_operators(&p)
            .iter()
            .enumerate()
            .filter(|(_, c)| c.matrix().max_abs() > 0.0)
            .map(|(k, _)| k)
            .collect();
        assert_eq!(nonzero, vec![0, 3]);
    }

    #[test]
    fn exchange_covariance_of_jumps() {
        let p = ModelParams::<f64>::reference().with_v12(0.0);
        let cs = jump_operators(&p);
        let s = swap::<f64>();
        for k in 0..3 {
            let swapped = s.matmul(cs[k].matrix()).matmul(&s);
            assert_eq!(&swapped, cs[k + 3].matrix());
        }
    }

    #[test]
    fn dark_state_properties() {
        let p = ModelParams::<f64>::reference();
        let (d, _) = dark_state(&p).unwrap();
        assert!((d[0].norm_sqr() - 25.0 / 25.04).abs() < 1e-15);
        assert!((d[0].norm_sqr() - 0.998403).abs() < 1e-6);
        assert!((d[2].norm_sqr() - 0.001597).abs() < 1e-6);
        assert_eq!(d[1], c(0.0, 0.0));
        let hd = single_atom_hamiltonian(&p).apply(&d);
        assert!(hd.iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn complex_drive_dark_state_is_annihilated() {
        let p = ModelParams::<f64>::new(c(0.3, 0.4), c(-1.0, 2.0), 1.0, 0.0, 0.0).unwrap();
        let (d, dd) = dark_state(&p).unwrap();
        let hd = single_atom_hamiltonian(&p).apply(&d);
        assert!(hd.iter().all(|z| z.norm() < 1e-14));
        let norm: f64 = dd.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_drive_rejected() {
        let p = ModelParams::<f64>::real(0.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(dark_state(&p).unwrap_err(), ModelError::DegenerateDrive);
    }

    #[test]
    fn negative_rates_rejected() {
        assert!(ModelParams::<f64>::real(0.2, 5.0, 1.0, -1.0, 0.0).is_err());
        assert!(ModelParams::<f64>::real(0.2, 5.0, 1.0, 0.0, -1e-3).is_err());
        assert!(ModelParams::<f64>::real(0.2, 5.0, f64::NAN, 0.0, 0.0).is_err());
    }

    #[test]
    fn generic_over_single_precision() {
        let p = ModelParams::<f32>::reference();
        let h = pair_hamiltonian(&p);
        assert_eq!(h.matrix()[(8, 8)].re, 1.0f32);
    }

    proptest! {
        #[test]
        fn sigma_product_rule(j in 1usize..=2, k in 1usize..=3, l in 1usize..=3, m in 1usize..=3, n in 1usize..=3) {
            let a = sig::<f64>(atom(j), k, l).matmul(&sig(atom(j), m, n));
            let want = if l == m { sig(atom(j), k, n) } else { Matrix::zeros(9, 9) };
            prop_assert_eq!(a, want);
        }

        #[test]
        fn pair_hamiltonian_is_hermitian(o1 in -5.0f64..5.0, o1i in -5.0f64..5.0, o2 in -5.0f64..5.0, v in -10.0f64..10.0) {
            let p = ModelParams::<f64>::new(c(o1, o1i), c(o2, 0.5), v, 0.1, 0.1).unwrap();
            prop_assert_eq!(pair_hamiltonian(&p).matrix().hermiticity_residue(), 0.0);
        }
    }
}
