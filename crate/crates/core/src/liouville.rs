//! Lindblad generator on column-stacked 9×9 matrices, its adjoint, the
//! steady state, time propagation and the generator spectrum.
//!
//! With `vec` stacking columns, `vec(AXB) = (Bᵀ⊗A) vec(X)`, so
//!
//! ```text
//! L  = −i(I⊗H − Hᵀ⊗I) + Σ_c [ c̄⊗c − ½(I⊗c†c + (c†c)ᵀ⊗I) ]
//! L† = +i(I⊗H − Hᵀ⊗I) + Σ_c [ cᵀ⊗c† − ½(I⊗c†c + (c†c)ᵀ⊗I) ]
//! ```
//!
//! The forward generator evolves density matrices, the adjoint evolves
//! effect matrices backward in time.

use num_complex::Complex;
use thiserror::Error;

use crate::algebra::{
    devectorize_slice, eig, eigenvalues, eigh, expm, kron, vec_slice, AlgebraError, Lu, Matrix, Real,
};
use crate::model::{jump_operators, pair_hamiltonian, ModelParams, PairOperator, PAIR_DIM};

pub const SUPER_DIM: usize = PAIR_DIM * PAIR_DIM;

/// Hermiticity tolerance for states and effects.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Trace tolerance for normalized states.
pub const TRACE_TOL: f64 = 1e-9;
/// Most negative eigenvalue accepted as roundoff.
pub const POSITIVITY_TOL: f64 = 1e-9;
/// Eigenvalues at or below this modulus count as stationary modes.
pub const ZERO_EIGENVALUE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiouvilleError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("steady state is not unique: {multiplicity} eigenvalues with |λ| ≤ 1e-10")]
    DegenerateSteadyState { multiplicity: usize },
    #[error("steady state has eigenvalue {min_eigenvalue:e} below −1e-8")]
    NotPositive { min_eigenvalue: f64 },
    #[error("negative propagation duration {0}")]
    NegativeDuration(f64),
    #[error("{0} must be propagated with the {1} generator")]
    WrongGenerator(&'static str, &'static str),
    #[error("invalid {kind}: {reason}")]
    InvalidMatrix { kind: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Generates `ρ̇ = 𝓛ρ`.
    Forward,
    /// Generates the backward evolution of effect matrices.
    Adjoint,
}

/// 81×81 generator acting on column-stacked 9×9 matrices.
#[derive(Clone, Debug)]
pub struct Liouvillian<T> {
    matrix: Matrix<T>,
    params: Option<ModelParams<T>>,
    direction: Direction,
}

impl<T: Real> Liouvillian<T> {
    /// Assembles a generator from a Hamiltonian and jump operators.
    pub fn from_operators(
        hamiltonian: &Matrix<T>,
        jumps: &[Matrix<T>],
        direction: Direction,
    ) -> Self {
        let n = hamiltonian.rows();
        let id = Matrix::identity(n);
        let unitary = &kron(&id, hamiltonian) - &kron(&hamiltonian.transpose(), &id);
        let sign = match direction {
            Direction::Forward => Complex::new(T::zero(), -T::one()),
            Direction::Adjoint => Complex::new(T::zero(), T::one()),
        };
        let mut l = unitary.scale(sign);
        let half = T::lit(0.5);
        for c in jumps {
            let cdc = c.adjoint().matmul(c);
            let sandwich = match direction {
                Direction::Forward => kron(&c.conj(), c),
                Direction::Adjoint => kron(&c.transpose(), &c.adjoint()),
            };
            l += &sandwich;
            let anti = &kron(&id, &cdc) + &kron(&cdc.transpose(), &id);
            l -= &anti.scale_real(half);
        }
        Self {
            matrix: l,
            params: None,
            direction,
        }
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn params(&self) -> Option<&ModelParams<T>> {
        self.params.as_ref()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// `devec(L · vec(x))`.
    pub fn apply(&self, x: &Matrix<T>) -> Matrix<T> {
        let n = x.rows();
        devectorize_slice(&self.matrix.apply(&vec_slice(x)), n, x.cols())
    }

    /// The dual generator (conjugate transpose of the superoperator matrix).
    pub fn dual(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
            params: self.params,
            direction: match self.direction {
                Direction::Forward => Direction::Adjoint,
                Direction::Adjoint => Direction::Forward,
            },
        }
    }

    /// Builds a reusable uniform-step propagator.
    pub fn propagator(&self, dt: T) -> Result<Propagator<T>, LiouvilleError> {
        Propagator::new(self, dt)
    }
}

/// Forward Lindblad generator for the pair model.
pub fn build_liouvillian<T: Real>(p: &ModelParams<T>) -> Liouvillian<T> {
    build(p, Direction::Forward)
}

/// Adjoint generator for backward evolution of effect matrices.
pub fn build_adjoint_liouvillian<T: Real>(p: &ModelParams<T>) -> Liouvillian<T> {
    build(p, Direction::Adjoint)
}

fn build<T: Real>(p: &ModelParams<T>, direction: Direction) -> Liouvillian<T> {
    let h = pair_hamiltonian(p);
    let jumps: Vec<Matrix<T>> = jump_operators(p).into_iter().map(PairOperator::into_matrix).collect();
    let mut l = Liouvillian::from_operators(h.matrix(), &jumps, direction);
    l.params = Some(*p);
    l
}

/// Residues of a matrix against the state/effect invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixCheck {
    pub trace_deviation: f64,
    pub hermiticity: f64,
    pub min_eigenvalue: f64,
}

impl MatrixCheck {
    pub fn of<T: Real>(m: &Matrix<T>) -> Self {
        let min_eigenvalue = eigh(m)
            .ok()
            .and_then(|e| e.eigenvalues.first().and_then(|x| x.to_f64()))
            .unwrap_or(f64::NAN);
        Self {
            trace_deviation: (m.trace() - Complex::new(T::one(), T::zero()))
                .norm()
                .to_f64()
                .unwrap_or(f64::NAN),
            hermiticity: m.hermiticity_residue().to_f64().unwrap_or(f64::NAN),
            min_eigenvalue,
        }
    }

    pub fn is_state(&self) -> bool {
        self.trace_deviation <= TRACE_TOL && self.is_effect()
    }

    pub fn is_effect(&self) -> bool {
        self.hermiticity <= HERMITIAN_TOL && self.min_eigenvalue >= -POSITIVITY_TOL
    }
}

/// Running worst-case record of state invariants met along a computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDiagnostics {
    pub checked: usize,
    pub max_trace_deviation: f64,
    pub max_hermiticity: f64,
    pub min_eigenvalue: f64,
}

impl Default for StateDiagnostics {
    fn default() -> Self {
        Self {
            checked: 0,
            max_trace_deviation: 0.0,
            max_hermiticity: 0.0,
            min_eigenvalue: f64::INFINITY,
        }
    }
}

impl StateDiagnostics {
    pub fn record(&mut self, check: MatrixCheck) {
        self.checked += 1;
        self.max_trace_deviation = self.max_trace_deviation.max(check.trace_deviation);
        self.max_hermiticity = self.max_hermiticity.max(check.hermiticity);
        self.min_eigenvalue = self.min_eigenvalue.min(check.min_eigenvalue);
    }

    pub fn record_state<T: Real>(&mut self, m: &Matrix<T>) {
        self.record(MatrixCheck::of(m));
    }

    pub fn merge(&mut self, other: &StateDiagnostics) {
        self.checked += other.checked;
        self.max_trace_deviation = self.max_trace_deviation.max(other.max_trace_deviation);
        self.max_hermiticity = self.max_hermiticity.max(other.max_hermiticity);
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
    }

    pub fn trace_ok(&self) -> bool {
        self.max_trace_deviation <= TRACE_TOL
    }

    pub fn hermiticity_ok(&self) -> bool {
        self.max_hermiticity <= HERMITIAN_TOL
    }

    pub fn positivity_ok(&self) -> bool {
        self.checked == 0 || self.min_eigenvalue >= -POSITIVITY_TOL
    }

    pub fn passes(&self) -> bool {
        self.trace_ok() && self.hermiticity_ok() && self.positivity_ok()
    }
}

/// Normalized density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct StateMatrix<T>(Matrix<T>);

/// Positive semidefinite effect matrix (not trace-normalized).
#[derive(Clone, Debug, PartialEq)]
pub struct EffectMatrix<T>(Matrix<T>);

fn require_pair_dim<T: Real>(m: &Matrix<T>, kind: &'static str) -> Result<(), LiouvilleError> {
    if m.rows() != PAIR_DIM || m.cols() != PAIR_DIM {
        return Err(LiouvilleError::InvalidMatrix {
            kind,
            reason: format!("expected 9x9, got {}x{}", m.rows(), m.cols()),
        });
    }
    Ok(())
}

impl<T: Real> StateMatrix<T> {
    pub fn new(m: Matrix<T>) -> Result<Self, LiouvilleError> {
        require_pair_dim(&m, "state")?;
        let check = MatrixCheck::of(&m);
        if !check.is_state() {
            return Err(LiouvilleError::InvalidMatrix {
                kind: "state",
                reason: format!("{check:?}"),
            });
        }
        Ok(Self(m))
    }

    /// `|ψ⟩⟨ψ|` for a normalized vector.
    pub fn pure(psi: &[Complex<T>]) -> Result<Self, LiouvilleError> {
        Self::new(Matrix::outer(psi, psi))
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    /// `Tr(A ρ)`.
    pub fn expect(&self, a: &Matrix<T>) -> Complex<T> {
        a.trace_product(&self.0)
    }

    pub fn check(&self) -> MatrixCheck {
        MatrixCheck::of(&self.0)
    }
}

impl<T: Real> EffectMatrix<T> {
    pub fn new(m: Matrix<T>) -> Result<Self, LiouvilleError> {
        require_pair_dim(&m, "effect")?;
        let check = MatrixCheck::of(&m);
        if !check.is_effect() {
            return Err(LiouvilleError::InvalidMatrix {
                kind: "effect",
                reason: format!("{check:?}"),
            });
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix::identity(PAIR_DIM))
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }
}

/// Unique stationary state from the bordered system `L vec(ρ) = 0`, `Tr ρ = 1`.
pub fn steady_state<T: Real>(l: &Liouvillian<T>) -> Result<StateMatrix<T>, LiouvilleError> {
    if l.direction != Direction::Forward {
        return Err(LiouvilleError::WrongGenerator("steady state", "forward"));
    }
    let zero_tol = T::tol(ZERO_EIGENVALUE_TOL);
    let multiplicity = eigenvalues(&l.matrix)?
        .iter()
        .filter(|z| z.norm() <= zero_tol)
        .count();
    if multiplicity != 1 {
        return Err(LiouvilleError::DegenerateSteadyState { multiplicity });
    }

    let n = PAIR_DIM;
    let mut bordered = l.matrix.clone();
    for k in 0..SUPER_DIM {
        bordered[(0, k)] = Complex::new(T::zero(), T::zero());
    }
    for i in 0..n {
        bordered[(0, i + n * i)] = Complex::new(T::one(), T::zero());
    }
    let mut rhs = vec![Complex::new(T::zero(), T::zero()); SUPER_DIM];
    rhs[0] = Complex::new(T::one(), T::zero());
    let v = Lu::new(&bordered)
        .map_err(|_| LiouvilleError::DegenerateSteadyState { multiplicity: 2 })?
        .solve_refined(&bordered, &rhs, 3);

    let rho = devectorize_slice(&v, n, n).hermitian_part();
    let tr = rho.trace().re;
    let rho = rho.scale_real(T::one() / tr);
    let min_eig = eigh(&rho)?.eigenvalues[0].to_f64().unwrap_or(f64::NAN);
    if !(min_eig >= -1e-8) {
        return Err(LiouvilleError::NotPositive {
            min_eigenvalue: min_eig,
        });
    }
    Ok(StateMatrix(rho))
}

fn check_duration<T: Real>(t: T) -> Result<(), LiouvilleError> {
    if !(t >= T::zero()) {
        return Err(LiouvilleError::NegativeDuration(t.to_f64().unwrap_or(f64::NAN)));
    }
    Ok(())
}

/// `devec(exp(L t) vec(x))` for an arbitrary 9×9 matrix.
pub fn propagate_matrix<T: Real>(l: &Liouvillian<T>, x: &Matrix<T>, t: T) -> Result<Matrix<T>, LiouvilleError> {
    check_duration(t)?;
    if t == T::zero() {
        return Ok(x.clone());
    }
    let prop = expm(&l.matrix.scale_real(t))?;
    Ok(devectorize_slice(&prop.apply(&vec_slice(x)), x.rows(), x.cols()))
}

/// Forward evolution of a density matrix.
pub fn propagate_state<T: Real>(
    l: &Liouvillian<T>,
    rho: &StateMatrix<T>,
    t: T,
) -> Result<StateMatrix<T>, LiouvilleError> {
    if l.direction != Direction::Forward {
        return Err(LiouvilleError::WrongGenerator("state", "forward"));
    }
    Ok(StateMatrix(propagate_matrix(l, &rho.0, t)?))
}

/// Backward evolution of an effect matrix by `t` under the adjoint generator.
pub fn propagate_effect<T: Real>(
    l_adj: &Liouvillian<T>,
    e: &EffectMatrix<T>,
    t: T,
) -> Result<EffectMatrix<T>, LiouvilleError> {
    if l_adj.direction != Direction::Adjoint {
        return Err(LiouvilleError::WrongGenerator("effect", "adjoint"));
    }
    Ok(EffectMatrix(propagate_matrix(l_adj, &e.0, t)?))
}

/// `exp(L·dt)` with its repeated squares, for stepping along uniform grids.
#[derive(Clone, Debug)]
pub struct Propagator<T> {
    dt: T,
    powers: Vec<Matrix<T>>,
}

impl<T: Real> Propagator<T> {
    pub fn new(l: &Liouvillian<T>, dt: T) -> Result<Self, LiouvilleError> {
        check_duration(dt)?;
        Ok(Self {
            dt,
            powers: vec![expm(&l.matrix.scale_real(dt))?],
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// One step on a vectorized matrix.
    pub fn step(&self, v: &[Complex<T>]) -> Vec<Complex<T>> {
        self.powers[0].apply(v)
    }

    /// `steps` steps on a vectorized matrix, using binary powers of the step.
    pub fn advance(&mut self, v: &[Complex<T>], steps: usize) -> Vec<Complex<T>> {
        let mut out = v.to_vec();
        let mut remaining = steps;
        let mut b = 0;
        while remaining > 0 {
            if b == self.powers.len() {
                let sq = self.powers[b - 1].matmul(&self.powers[b - 1]);
                self.powers.push(sq);
            }
            if remaining & 1 == 1 {
                out = self.powers[b].apply(&out);
            }
            remaining >>= 1;
            b += 1;
        }
        out
    }

    /// `steps` steps on a 9×9 matrix.
    pub fn advance_matrix(&mut self, x: &Matrix<T>, steps: usize) -> Matrix<T> {
        devectorize_slice(&self.advance(&vec_slice(x), steps), x.rows(), x.cols())
    }

    /// Number of whole steps in `t`, if `t` is an integer multiple of `dt`
    /// to relative precision 1e-9.
    pub fn steps_for(&self, t: T) -> Option<usize> {
        if self.dt == T::zero() {
            return None;
        }
        let n = (t / self.dt).round();
        let tol = T::tol(1e-9) * n.max(T::one());
        ((t / self.dt - n).abs() <= tol && n >= T::zero()).then(|| n.to_usize().unwrap_or(0))
    }
}

/// Propagates vectorized matrices, using step powers for durations that are
/// whole multiples of the configured step and a fresh exponential otherwise.
#[derive(Clone, Debug)]
pub struct Evolver<T> {
    generator: Liouvillian<T>,
    stepper: Option<Propagator<T>>,
}

impl<T: Real> Evolver<T> {
    pub fn new(l: &Liouvillian<T>) -> Self {
        Self {
            generator: l.clone(),
            stepper: None,
        }
    }

    pub fn with_step(l: &Liouvillian<T>, dt: T) -> Result<Self, LiouvilleError> {
        let stepper = if dt > T::zero() { Some(l.propagator(dt)?) } else { None };
        Ok(Self {
            generator: l.clone(),
            stepper,
        })
    }

    pub fn generator(&self) -> &Liouvillian<T> {
        &self.generator
    }

    /// Dense `exp(L t)`.
    pub fn exponential(&self, t: T) -> Result<Matrix<T>, LiouvilleError> {
        check_duration(t)?;
        Ok(expm(&self.generator.matrix.scale_real(t))?)
    }

    pub fn evolve(&mut self, v: &[Complex<T>], t: T) -> Result<Vec<Complex<T>>, LiouvilleError> {
        check_duration(t)?;
        if t == T::zero() {
            return Ok(v.to_vec());
        }
        if let Some(stepper) = self.stepper.as_mut() {
            if let Some(n) = stepper.steps_for(t) {
                return Ok(stepper.advance(v, n));
            }
        }
        Ok(self.exponential(t)?.apply(v))
    }

    pub fn evolve_matrix(&mut self, x: &Matrix<T>, t: T) -> Result<Matrix<T>, LiouvilleError> {
        let v = self.evolve(&vec_slice(x), t)?;
        Ok(devectorize_slice(&v, x.rows(), x.cols()))
    }

    /// Values of `exp(L t) x` at each of the nondecreasing, nonnegative `times`.
    pub fn evolve_along(&mut self, x: &Matrix<T>, times: &[T]) -> Result<Vec<Matrix<T>>, LiouvilleError> {
        let mut out = Vec::with_capacity(times.len());
        let mut v = vec_slice(x);
        let mut now = T::zero();
        for &t in times {
            v = self.evolve(&v, t - now)?;
            now = t;
            out.push(devectorize_slice(&v, x.rows(), x.cols()));
        }
        Ok(out)
    }
}

/// Eigen-decomposition of a generator with modes reshaped to 9×9 matrices.
#[derive(Clone, Debug)]
pub struct LiouvillianSpectrum<T> {
    pub eigenvalues: Vec<Complex<T>>,
    /// Right eigenmatrices; the stationary mode is scaled to unit trace.
    pub right_modes: Vec<Matrix<T>>,
    /// Left eigenmatrices `W_k`; the coefficient of mode `k` in `X` is
    /// `Σ_ab W_k[a,b]·X[a,b]`, so `W_k` is biorthogonal to the right modes.
    pub left_modes: Vec<Matrix<T>>,
}

impl<T: Real> LiouvillianSpectrum<T> {
    pub fn zero_mode_count(&self, tol: T) -> usize {
        self.eigenvalues.iter().filter(|z| z.norm() <= tol).count()
    }

    pub fn max_real_part(&self) -> T {
        self.eigenvalues.iter().fold(T::neg_infinity(), |a, z| a.max(z.re))
    }

    /// Largest distance from an eigenvalue to the nearest conjugate of another,
    /// matched one-to-one.
    pub fn conjugate_mismatch(&self) -> T {
        let mut unused: Vec<Complex<T>> = self.eigenvalues.clone();
        let mut worst = T::zero();
        for z in &self.eigenvalues {
            let target = z.conj();
            let (k, d) = unused
                .iter()
                .enumerate()
                .map(|(k, w)| (k, (*w - target).norm()))
                .fold((0, T::infinity()), |best, cur| if cur.1 < best.1 { cur } else { best });
            worst = worst.max(d);
            unused.swap_remove(k);
        }
        worst
    }
}

pub fn spectrum<T: Real>(l: &Liouvillian<T>) -> Result<LiouvillianSpectrum<T>, LiouvilleError> {
    let dec = eig(&l.matrix)?;
    let n = PAIR_DIM;
    let right = dec.right_eigenvectors();
    let left = dec.left_eigenvectors();
    let mut right_modes = Vec::with_capacity(SUPER_DIM);
    let mut left_modes = Vec::with_capacity(SUPER_DIM);
    for k in 0..SUPER_DIM {
        let mut r = devectorize_slice(&right.column_vec(k), n, n);
        let mut w = devectorize_slice(&left.row_vec(k), n, n);
        let tr = r.trace();
        if dec.eigenvalues()[k].norm() <= T::tol(ZERO_EIGENVALUE_TOL) && tr.norm() > T::epsilon() {
            r = r.scale(tr.inv());
            w = w.scale(tr);
        }
        right_modes.push(r);
        left_modes.push(w);
    }
    Ok(LiouvillianSpectrum {
        eigenvalues: dec.eigenvalues().to_vec(),
        right_modes,
        left_modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::testutil::*;
    use crate::algebra::{c, vectorize};
    use crate::model::{dark_state, sig, AtomIndex};

    fn reference() -> ModelParams<f64> {
        ModelParams::reference()
    }

    /// Right-hand side of the master equation evaluated with explicit commutators.
    fn lindblad_direct(p: &ModelParams<f64>, rho: &Matrix<f64>) -> Matrix<f64> {
        let h = pair_hamiltonian(p).into_matrix();
        let comm = &h.matmul(rho) - &rho.matmul(&h);
        let mut out = comm.scale(c(0.0, -1.0));
        for cop in jump_operators(p) {
            let cm = cop.matrix();
            let cd = cm.adjoint();
            let cdc = cd.matmul(cm);
            out += &cm.matmul(rho).matmul(&cd);
            out -= &(&cdc.matmul(rho) + &rho.matmul(&cdc)).scale_real(0.5);
        }
        out
    }

    fn adjoint_direct(p: &ModelParams<f64>, e: &Matrix<f64>) -> Matrix<f64> {
        let h = pair_hamiltonian(p).into_matrix();
        let comm = &h.matmul(e) - &e.matmul(&h);
        let mut out = comm.scale(c(0.0, 1.0));
        for cop in jump_operators(p) {
            let cm = cop.matrix();
            let cd = cm.adjoint();
            let cdc = cd.matmul(cm);
            out += &cd.matmul(e).matmul(cm);
            out -= &(&cdc.matmul(e) + &e.matmul(&cdc)).scale_real(0.5);
        }
        out
    }

    #[test]
    fn zero_model_gives_zero_generator() {
        let p = ModelParams::<f64>::real(0.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        // γ₁ = 1 is the unit, so drop the jumps explicitly for the all-zero case.
        let h = pair_hamiltonian(&p).into_matrix();
        let l = Liouvillian::from_operators(&h, &[], Direction::Forward);
        assert_eq!(l.matrix().max_abs(), 0.0);
    }

    #[test]
    fn action_matches_direct_commutators() {
        let p = reference();
        let l = build_liouvillian(&p);
        let mut r = rng(51);
        for _ in 0..20 {
            let rho = random_hermitian(&mut r, 9);
            let want = lindblad_direct(&p, &rho);
            assert!(l.apply(&rho).max_abs_diff(&want) < 1e-12);
            assert!(l.apply(&rho).trace().norm() < 1e-12);
        }
    }

    #[test]
    fn adjoint_action_and_duality() {
        let p = reference();
        let l = build_liouvillian(&p);
        let la = build_adjoint_liouvillian(&p);
        let mut r = rng(52);
        for _ in 0..20 {
            let e = random_hermitian(&mut r, 9);
            let rho = random_hermitian(&mut r, 9);
            assert!(la.apply(&e).max_abs_diff(&adjoint_direct(&p, &e)) < 1e-12);
            let lhs = e.trace_product(&l.apply(&rho));
            let rhs = la.apply(&e).trace_product(&rho);
            assert!((lhs - rhs).norm() < 1e-12);
        }
        assert!(la.matrix().max_abs_diff(&l.dual().matrix) < 1e-15);
    }

    #[test]
    fn adjoint_annihilates_identity() {
        let la = build_adjoint_liouvillian(&reference());
        assert!(la.apply(&Matrix::identity(9)).max_abs() < 1e-15);
    }

    #[test]
    fn adjoint_spectrum_is_conjugate_of_forward() {
        let p = reference();
        let f = eigenvalues(build_liouvillian(&p).matrix()).unwrap();
        let a = eigenvalues(build_adjoint_liouvillian(&p).matrix()).unwrap();
        for z in &f {
            let d = a.iter().map(|w| (*w - z.conj()).norm()).fold(f64::MAX, f64::min);
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn hermiticity_is_preserved() {
        let l = build_liouvillian(&reference());
        let rho = random_hermitian(&mut rng(53), 9);
        assert!(l.apply(&rho).hermiticity_residue() < 1e-13);
    }

    #[test]
    fn dephasing_forms_are_equivalent() {
        let p = reference();
        let h = pair_hamiltonian(&p).into_matrix();
        let literal: Vec<Matrix<f64>> = jump_operators(&p).into_iter().map(|c| c.into_matrix()).collect();
        let mut shifted = literal.clone();
        for (k, j) in [(2usize, AtomIndex::One), (5, AtomIndex::Two)] {
            shifted[k] = sig::<f64>(j, 3, 3).scale_real(2.0 * p.gamma_ph.sqrt());
        }
        let a = Liouvillian::from_operators(&h, &literal, Direction::Forward);
        let b = Liouvillian::from_operators(&h, &shifted, Direction::Forward);
        assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-12);
    }

    #[test]
    fn dark_pair_is_stationary_without_upper_dissipation() {
        let p = ModelParams::<f64>::real(0.2, 5.0, 0.0, 0.0, 0.0).unwrap();
        let rho = steady_state(&build_liouvillian(&p)).unwrap();
        let (_, dd) = dark_state(&p).unwrap();
        let want = Matrix::outer(&dd, &dd);
        assert!(rho.matrix().max_abs_diff(&want) < 1e-8);
        for j in AtomIndex::BOTH {
            assert!(rho.expect(&sig(j, 2, 2)).norm() < 1e-8);
        }
    }

    #[test]
    fn reference_steady_state() {
        let l = build_liouvillian(&reference());
        let rho = steady_state(&l).unwrap();
        assert!((rho.matrix().trace() - c(1.0, 0.0)).norm() < 1e-12);
        assert!(rho.check().is_state());
        let resid = l.apply(rho.matrix()).max_abs();
        assert!(resid < 1e-10);
    }

    #[test]
    fn blockade_suppresses_double_rydberg_population() {
        let with = steady_state(&build_liouvillian(&reference())).unwrap();
        let without = steady_state(&build_liouvillian(&reference().with_v12(0.0))).unwrap();
        assert!(with.matrix()[(8, 8)].re < without.matrix()[(8, 8)].re);
    }

    #[test]
    fn degenerate_steady_state_detected() {
        let h = Matrix::<f64>::zeros(9, 9);
        let l = Liouvillian::from_operators(&h, &[], Direction::Forward);
        assert!(matches!(
            steady_state(&l),
            Err(LiouvilleError::DegenerateSteadyState { multiplicity: 81 })
        ));
    }

    #[test]
    fn blockaded_pair_without_upper_dissipation_has_unique_state() {
        let p = ModelParams::<f64>::real(0.2, 5.0, 1.0, 0.0, 0.0).unwrap();
        let rho = steady_state(&build_liouvillian(&p)).unwrap();
        assert!(rho.check().is_state());
    }

    #[test]
    fn propagation_basics() {
        let p = reference();
        let l = build_liouvillian(&p);
        let ss = steady_state(&l).unwrap();
        let rho = StateMatrix::new(random_density(&mut rng(54), 9)).unwrap();
        assert_eq!(propagate_state(&l, &rho, 0.0).unwrap(), rho);
        let later = propagate_state(&l, &ss, 7.3).unwrap();
        assert!(later.matrix().max_abs_diff(ss.matrix()) < 1e-10);

        let direct = propagate_state(&l, &rho, 1.7).unwrap();
        let stepped = propagate_state(&l, &propagate_state(&l, &rho, 0.6).unwrap(), 1.1).unwrap();
        assert!(direct.matrix().max_abs_diff(stepped.matrix()) < 1e-10);
        assert!(direct.check().is_state());

        assert!(matches!(
            propagate_state(&l, &rho, -1.0),
            Err(LiouvilleError::NegativeDuration(_))
        ));
        let e = EffectMatrix::identity();
        assert!(matches!(
            propagate_effect(&l, &e, 1.0),
            Err(LiouvilleError::WrongGenerator(..))
        ));
        let la = build_adjoint_liouvillian(&p);
        let back = propagate_effect(&la, &e, 3.0).unwrap();
        assert!(back.matrix().max_abs_diff(&Matrix::identity(9)) < 1e-12);
    }

    #[test]
    fn propagator_powers_match_expm() {
        let l = build_liouvillian(&reference());
        let rho = random_density(&mut rng(55), 9);
        let mut prop = l.propagator(0.05).unwrap();
        let fast = prop.advance_matrix(&rho, 37);
        let direct = propagate_matrix(&l, &rho, 37.0 * 0.05).unwrap();
        assert!(fast.max_abs_diff(&direct) < 1e-11);
        assert_eq!(prop.steps_for(37.0 * 0.05), Some(37));
        assert_eq!(prop.steps_for(0.051), None);
    }

    #[test]
    fn evolver_matches_direct_propagation() {
        let l = build_liouvillian(&reference());
        let rho = random_density(&mut rng(56), 9);
        let mut ev = Evolver::with_step(&l, 0.1).unwrap();
        let times = [0.0, 0.1, 0.3, 0.35, 2.0];
        let got = ev.evolve_along(&rho, &times).unwrap();
        for (t, m) in times.iter().zip(&got) {
            let want = propagate_matrix(&l, &rho, *t).unwrap();
            assert!(m.max_abs_diff(&want) < 1e-11, "t={t}");
        }
        assert!(ev.evolve_along(&rho, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn spectrum_structure() {
        let l = build_liouvillian(&reference());
        let s = spectrum(&l).unwrap();
        assert_eq!(s.zero_mode_count(1e-10), 1);
        assert!(s.max_real_part() <= 1e-10);
        assert!(s.conjugate_mismatch() <= 1e-8);
        let ss = steady_state(&l).unwrap();
        assert!(s.right_modes[0].max_abs_diff(ss.matrix()) < 1e-8);
        // stationary left mode is the trace functional
        assert!(s.left_modes[0].max_abs_diff(&Matrix::identity(9)) < 1e-8);
    }

    #[test]
    fn vectorized_identity_is_left_null_vector() {
        let l = build_liouvillian(&reference());
        let id = vectorize(&Matrix::<f64>::identity(9));
        let row = id.transpose().matmul(l.matrix());
        assert!(row.max_abs() < 1e-14);
    }

    #[test]
    fn single_precision_generator_preserves_trace() {
        let p = ModelParams::<f32>::reference();
        let l = build_liouvillian(&p);
        let rho = Matrix::<f32>::identity(9).scale_real(1.0 / 9.0);
        assert!(l.apply(&rho).trace().norm() < 1e-5);
    }
}
