//! Past quantum state: a forward state conditioned on an earlier click paired
//! with a backward effect matrix conditioned on a later one.
//!
//! Between a click on atom `i` at time 0 and a click on atom `k` at `T`,
//!
//! ```text
//! ρ_c(τ) = e^{Lτ}(σ₁₂ⁱ ρ_ss σ₂₁ⁱ) / nᵢ
//! E(τ)   = e^{L†(T−τ)}(σ₂₂ᵏ)
//! P(m)   = Tr(Ω_m ρ_c Ω_m† E) / Σ_m' Tr(Ω_m' ρ_c Ω_m'† E)
//! ```
//!
//! The quadrature read at `τ` is `Re e^{iθ} Tr(E ρ_c σ₂₁ʲ) / Tr(E ρ_c)` and a
//! click on atom `j` at `τ` weighs `Tr(E σ₁₂ʲ ρ_c σ₂₁ʲ) / Tr(E ρ_c)`.

use num_complex::Complex;
use thiserror::Error;

use crate::algebra::{Matrix, Real};
use crate::correlators::{CorrelationError, CorrelationKind, CorrelationSeries, Correlator};
use crate::liouville::{
    build_adjoint_liouvillian, build_liouvillian, Direction, EffectMatrix, Evolver, LiouvilleError, Liouvillian,
    StateDiagnostics, StateMatrix,
};
use crate::model::{sig, AtomIndex, ModelParams, PairOperator, LEVELS, PAIR_DIM};

/// Completeness tolerance for measurement operators.
pub const COMPLETENESS_TOL: f64 = 1e-10;
/// Smallest history weight `Tr(E ρ_c)` accepted.
pub const MIN_HISTORY_WEIGHT: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PqsError {
    #[error(transparent)]
    Liouville(#[from] LiouvilleError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error("measurement operators are incomplete: ‖Σ Ω†Ω − I‖ = {residue:e}")]
    IncompletePovm { residue: f64 },
    #[error("conditioning history has vanishing probability {weight:e}")]
    ZeroHistoryProbability { weight: f64 },
    #[error("{labels} labels for {effects} measurement operators")]
    LabelMismatch { labels: usize, effects: usize },
}

/// Measurement operators `Ω_m` with `Σ Ω_m†Ω_m = I`.
#[derive(Clone, Debug)]
pub struct PovmSet<T: Real> {
    effects: Vec<PairOperator<T>>,
    labels: Vec<String>,
}

impl<T: Real> PovmSet<T> {
    pub fn new(effects: Vec<PairOperator<T>>, labels: Vec<String>) -> Result<Self, PqsError> {
        if labels.len() != effects.len() {
            return Err(PqsError::LabelMismatch {
                labels: labels.len(),
                effects: effects.len(),
            });
        }
        let mut sum = Matrix::zeros(PAIR_DIM, PAIR_DIM);
        for e in &effects {
            sum += &e.matrix().adjoint().matmul(e.matrix());
        }
        let residue = sum.max_abs_diff(&Matrix::identity(PAIR_DIM));
        if !(residue <= T::tol(COMPLETENESS_TOL)) {
            return Err(PqsError::IncompletePovm {
                residue: residue.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { effects, labels })
    }

    /// Projective readout of whether `atom` is in `level`.
    pub fn level(atom: AtomIndex, level: usize) -> Result<Self, PqsError> {
        let p = sig::<T>(atom, level, level);
        let q = &Matrix::identity(PAIR_DIM) - &p;
        let yes = PairOperator::new(p, format!("sigma{level}{level}^({atom})")).expect("9x9");
        let no = PairOperator::new(q, format!("1-sigma{level}{level}^({atom})")).expect("9x9");
        Self::new(vec![yes, no], vec!["in".into(), "out".into()])
    }

    pub fn effects(&self) -> &[PairOperator<T>] {
        &self.effects
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }
}

/// Forward and backward matrices at one intermediate time.
#[derive(Clone, Debug)]
pub struct ConditionalPair<T> {
    pub rho_c: StateMatrix<T>,
    pub effect: EffectMatrix<T>,
    pub tau: T,
    pub t_sep: T,
}

impl<T: Real> ConditionalPair<T> {
    pub fn new(rho_c: StateMatrix<T>, effect: EffectMatrix<T>, tau: T, t_sep: T) -> Result<Self, PqsError> {
        let pair = Self {
            rho_c,
            effect,
            tau,
            t_sep,
        };
        pair.weight()?;
        Ok(pair)
    }

    /// `Tr(E ρ_c)`, the probability weight of the conditioning record.
    pub fn weight(&self) -> Result<T, PqsError> {
        let w = self.effect.matrix().trace_product(self.rho_c.matrix()).re;
        if !(w > T::lit(MIN_HISTORY_WEIGHT)) {
            return Err(PqsError::ZeroHistoryProbability {
                weight: w.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(w)
    }
}

/// Reduced 3×3 state of `keep` after tracing out the other atom.
pub fn reduced_state<T: Real>(m: &Matrix<T>, keep: AtomIndex) -> Matrix<T> {
    let idx = |a: usize, b: usize| match keep {
        AtomIndex::One => LEVELS * a + b,
        AtomIndex::Two => LEVELS * b + a,
    };
    Matrix::from_fn(LEVELS, LEVELS, |a, c| {
        (0..LEVELS).fold(Complex::new(T::zero(), T::zero()), |s, b| s + m[(idx(a, b), idx(c, b))])
    })
}

fn jumped<T: Real>(c: &Correlator<T>, i: AtomIndex) -> Result<Matrix<T>, PqsError> {
    Ok(c.after_count(i)?)
}

/// `ρ_c(τ)` after a click on atom `i` at time 0, starting from the steady state of `l`.
pub fn forward_after_click<T: Real>(l: &Liouvillian<T>, i: AtomIndex, tau: T) -> Result<StateMatrix<T>, PqsError> {
    let c = Correlator::from_liouvillian(l)?;
    let x = Evolver::new(l).evolve_matrix(&jumped(&c, i)?, tau)?;
    Ok(StateMatrix::new(x)?)
}

/// `E` a time `remaining` before a click on atom `k`, evolved with the adjoint generator.
pub fn backward_before_click<T: Real>(
    l_adj: &Liouvillian<T>,
    k: AtomIndex,
    remaining: T,
) -> Result<EffectMatrix<T>, PqsError> {
    if l_adj.direction() != Direction::Adjoint {
        return Err(LiouvilleError::WrongGenerator("effect", "adjoint").into());
    }
    if !(remaining >= T::zero()) {
        return Err(LiouvilleError::NegativeDuration(remaining.to_f64().unwrap_or(f64::NAN)).into());
    }
    let x = Evolver::new(l_adj).evolve_matrix(&sig(k, 2, 2), remaining)?;
    Ok(EffectMatrix::new(x)?)
}

/// Outcome probabilities given both the prior and posterior record.
pub fn pqs_probability<T: Real>(pair: &ConditionalPair<T>, povm: &PovmSet<T>) -> Result<Vec<T>, PqsError> {
    let rho = pair.rho_c.matrix();
    let e = pair.effect.matrix();
    let raw: Vec<T> = povm
        .effects()
        .iter()
        .map(|om| {
            let o = om.matrix();
            e.trace_product(&o.matmul(rho).matmul(&o.adjoint())).re.max(T::zero())
        })
        .collect();
    let total = raw.iter().fold(T::zero(), |s, p| s + *p);
    if !(total > T::lit(MIN_HISTORY_WEIGHT)) {
        return Err(PqsError::ZeroHistoryProbability {
            weight: total.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(raw.into_iter().map(|p| p / total).collect())
}

/// `Re e^{iθ} Tr(E ρ_c σ₂₁ʲ) / Tr(E ρ_c)`.
pub fn pqs_conditional_amplitude<T: Real>(pair: &ConditionalPair<T>, j: AtomIndex, theta: T) -> Result<T, PqsError> {
    let w = pair.weight()?;
    let amp = pair.rho_c.matrix().matmul(&sig(j, 2, 1));
    let z = pair.effect.matrix().trace_product(&amp) * Complex::new(theta.cos(), theta.sin());
    Ok(z.re / w)
}

/// `Tr(E σ₁₂ʲ ρ_c σ₂₁ʲ) / Tr(E ρ_c)`.
pub fn pqs_conditional_intensity<T: Real>(pair: &ConditionalPair<T>, j: AtomIndex) -> Result<T, PqsError> {
    let w = pair.weight()?;
    let down = sig::<T>(j, 1, 2);
    let jumped = down.matmul(pair.rho_c.matrix()).matmul(&down.adjoint());
    Ok(pair.effect.matrix().trace_product(&jumped).re / w)
}

/// Forward and adjoint generators with the stationary moments used to turn
/// conditional expectations back into normalized correlation functions.
#[derive(Debug, Clone)]
pub struct PastQuantumState<T> {
    stationary: Correlator<T>,
    adjoint: Liouvillian<T>,
}

impl<T: Real> PastQuantumState<T> {
    pub fn new(p: &ModelParams<T>) -> Result<Self, PqsError> {
        Ok(Self {
            stationary: Correlator::from_liouvillian(&build_liouvillian(p))?,
            adjoint: build_adjoint_liouvillian(p),
        })
    }

    pub fn stationary(&self) -> &Correlator<T> {
        &self.stationary
    }

    /// Pairs `(ρ_c(τ), E(τ))` on `grid ⊂ [0, T]` for clicks on `i` at 0 and `k` at `T`.
    pub fn pairs(
        &self,
        i: AtomIndex,
        k: AtomIndex,
        grid: &[T],
        t_sep: T,
    ) -> Result<(Vec<ConditionalPair<T>>, StateDiagnostics), PqsError> {
        if grid.is_empty() || grid[0] < T::zero() || *grid.last().expect("nonempty") > t_sep {
            return Err(CorrelationError::InvalidGrid("pair grid must lie in [0, T]".into()).into());
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CorrelationError::InvalidGrid("grid not strictly increasing".into()).into());
        }
        let dt = match grid {
            [a, b, ..] => *b - *a,
            _ => T::zero(),
        };
        let forward = Evolver::with_step(self.stationary.generator(), dt)?
            .evolve_along(&jumped(&self.stationary, i)?, grid)?;
        let remaining: Vec<T> = grid.iter().rev().map(|t| t_sep - *t).collect();
        let mut backward = Evolver::with_step(&self.adjoint, dt)?.evolve_along(&sig(k, 2, 2), &remaining)?;
        backward.reverse();

        let mut diag = StateDiagnostics::default();
        let mut pairs = Vec::with_capacity(grid.len());
        for ((tau, rho), e) in grid.iter().zip(forward).zip(backward) {
            diag.record_state(&rho);
            pairs.push(ConditionalPair::new(StateMatrix::new(rho)?, EffectMatrix::new(e)?, *tau, t_sep)?);
        }
        Ok((pairs, diag))
    }

    /// `g³_ijk(τ, T)` assembled from conditional click weights.
    pub fn g3(&self, i: AtomIndex, j: AtomIndex, k: AtomIndex, grid: &[T], t_sep: T) -> Result<CorrelationSeries<T>, PqsError> {
        let norm = self.stationary.rate(j)? * self.stationary.rate(k)?;
        let (pairs, diag) = self.pairs(i, k, grid, t_sep)?;
        let values = pairs
            .iter()
            .map(|p| Ok(pqs_conditional_intensity(p, j)? * p.weight()? / norm))
            .collect::<Result<Vec<T>, PqsError>>()?;
        let mut s = CorrelationSeries::new(CorrelationKind::G3, vec![i, j, k], grid.to_vec(), values)?;
        s.t_sep = Some(t_sep);
        s.diagnostics = diag;
        Ok(s)
    }

    /// `g²·⁵_ijk(τ, T, θ)` assembled from conditional quadratures.
    pub fn g25(
        &self,
        i: AtomIndex,
        j: AtomIndex,
        k: AtomIndex,
        theta: T,
        grid: &[T],
        t_sep: T,
    ) -> Result<CorrelationSeries<T>, PqsError> {
        let norm = self.stationary.rate(k)? * self.stationary.quadrature(j, theta)?;
        let (pairs, diag) = self.pairs(i, k, grid, t_sep)?;
        let values = pairs
            .iter()
            .map(|p| Ok(pqs_conditional_amplitude(p, j, theta)? * p.weight()? / norm))
            .collect::<Result<Vec<T>, PqsError>>()?;
        let mut s = CorrelationSeries::new(CorrelationKind::G25, vec![i, j, k], grid.to_vec(), values)?;
        s.theta = Some(theta);
        s.t_sep = Some(t_sep);
        s.diagnostics = diag;
        Ok(s)
    }
}
