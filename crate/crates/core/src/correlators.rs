//! Steady-state photon correlation functions by the quantum regression recipe.
//!
//! A photon count on atom `i` maps `ρ ↦ σ₁₂ⁱ ρ σ₂₁ⁱ`. A quadrature readout of
//! atom `j` at an intermediate time multiplies from the right, `ρ ↦ ρ σ₂₁ʲ e^{iθ}`,
//! which is where an operator sitting to the left of later-time operators in
//! the correlator ends up after regression. Between insertions everything
//! evolves with the master-equation generator.
//!
//! ```text
//! g²_ij(τ)       = Tr[σ₂₂ʲ e^{Lτ}(σ₁₂ⁱ ρ σ₂₁ⁱ)] / (nᵢ nⱼ)
//! g¹·⁵_ij(τ≥0)   = Re e^{iθ} Tr[σ₂₁ʲ e^{Lτ}(σ₁₂ⁱ ρ σ₂₁ⁱ)] / (nᵢ qⱼ)
//! g¹·⁵_ij(τ<0)   = Re e^{iθ} Tr[σ₂₂ⁱ e^{L|τ|}(ρ σ₂₁ʲ)] / (nᵢ qⱼ)
//! g³_ijk(τ,T)    = Tr[σ₂₂ᵏ e^{L(T−τ)}(σ₁₂ʲ ρᵢ(τ) σ₂₁ʲ)] / (nᵢ nⱼ nₖ)
//! g²·⁵_ijk(τ,T)  = Re e^{iθ} Tr[σ₂₂ᵏ e^{L(T−τ)}(ρᵢ(τ) σ₂₁ʲ)] / (nᵢ nₖ qⱼ)
//! ```
//!
//! with `nⱼ = ⟨σ₂₂ʲ⟩`, `qⱼ = Re(⟨σ₂₁ʲ⟩ e^{iθ})` and `ρᵢ(τ) = e^{Lτ}(σ₁₂ⁱ ρ σ₂₁ⁱ)`.

use std::fmt;

use num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::algebra::{devectorize_slice, vec_slice, Matrix, Real};
use crate::liouville::{
    steady_state, Direction, Evolver, LiouvilleError, Liouvillian, StateDiagnostics, StateMatrix,
};
use crate::model::{sig, AtomIndex, ModelParams, PairOperator};

/// Emission rates below this are treated as a dark configuration.
pub const MIN_EMISSION_RATE: f64 = 1e-14;
/// Relative floor for the mean quadrature, in units of `√⟨σ₂₂⟩`.
pub const MIN_QUADRATURE: f64 = 1e-12;
/// Samples per Rabi period on default grids.
pub const SAMPLES_PER_PERIOD: usize = 40;
/// Half-span of default two-time grids, in units of 1/γ₁.
pub const TWO_TIME_SPAN: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelationError {
    #[error(transparent)]
    Liouville(#[from] LiouvilleError),
    #[error("event times must be nonnegative and nondecreasing")]
    UnorderedEvents,
    #[error("atom {atom} has emission rate {rate:e}, too small to normalize by")]
    ZeroEmissionRate { atom: AtomIndex, rate: f64 },
    #[error("mean quadrature of atom {atom} at θ = {theta} is {value:e}")]
    DegenerateQuadrature { atom: AtomIndex, theta: f64, value: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("series contains a non-finite value at τ = {0}")]
    NonFinite(f64),
    #[error("{0} samples selected, at least 16 needed")]
    TooFewSamples(usize),
    #[error("no periodogram peak stands out from the background")]
    NoOscillation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationKind {
    G2,
    G15,
    G3,
    G25,
    AmplitudeRatio,
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationKind::G2 => "g2",
            CorrelationKind::G15 => "g15",
            CorrelationKind::G3 => "g3",
            CorrelationKind::G25 => "g25",
            CorrelationKind::AmplitudeRatio => "amplitude_ratio",
        })
    }
}

/// A correlation function sampled on a grid.
///
/// For [`CorrelationKind::AmplitudeRatio`] the grid holds separations `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSeries<T> {
    pub kind: CorrelationKind,
    pub atoms: Vec<AtomIndex>,
    pub theta: Option<T>,
    pub t_sep: Option<T>,
    pub tau: Vec<T>,
    pub values: Vec<T>,
    /// Per-sample standard errors, for statistical estimates.
    pub std_errors: Option<Vec<T>>,
    /// Largest imaginary part discarded when taking real values, relative to
    /// `max(1, |value|)`.
    pub imag_residue: T,
    pub diagnostics: StateDiagnostics,
}

impl<T: Real> CorrelationSeries<T> {
    pub fn new(kind: CorrelationKind, atoms: Vec<AtomIndex>, tau: Vec<T>, values: Vec<T>) -> Result<Self, CorrelationError> {
        check_grid(&tau)?;
        if tau.len() != values.len() {
            return Err(CorrelationError::InvalidGrid(format!(
                "{} grid points but {} values",
                tau.len(),
                values.len()
            )));
        }
        if let Some((t, _)) = tau.iter().zip(&values).find(|(_, v)| !v.is_finite()) {
            return Err(CorrelationError::NonFinite(t.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self {
            kind,
            atoms,
            theta: None,
            t_sep: None,
            tau,
            values,
            std_errors: None,
            imag_residue: T::zero(),
            diagnostics: StateDiagnostics::default(),
        })
    }

    /// Atom indices written together, e.g. `122`.
    pub fn atoms_label(&self) -> String {
        self.atoms.iter().map(|a| a.number().to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Restriction to grid points satisfying `keep`.
    pub fn select(&self, keep: impl Fn(T) -> bool) -> (Vec<T>, Vec<T>) {
        self.tau
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| keep(**t))
            .map(|(t, v)| (*t, *v))
            .unzip()
    }
}

fn check_grid<T: Real>(tau: &[T]) -> Result<(), CorrelationError> {
    if tau.is_empty() {
        return Err(CorrelationError::InvalidGrid("empty grid".into()));
    }
    if tau.iter().any(|t| !t.is_finite()) {
        return Err(CorrelationError::InvalidGrid("non-finite grid point".into()));
    }
    if tau.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(CorrelationError::InvalidGrid("grid not strictly increasing".into()));
    }
    Ok(())
}

/// Rabi period `2π/Ω_R` divided into [`SAMPLES_PER_PERIOD`] steps.
pub fn default_dtau<T: Real>(p: &ModelParams<T>) -> T {
    p.rabi_period() / T::lit(SAMPLES_PER_PERIOD as f64)
}

/// `m·dτ` for `m = 0, 1, …` up to `end`.
pub fn forward_grid<T: Real>(end: T, dtau: T) -> Vec<T> {
    let n = (end / dtau + T::lit(1e-9)).floor().to_usize().unwrap_or(0);
    (0..=n).map(|m| T::lit(m as f64) * dtau).collect()
}

/// `m·dτ` for `|m·dτ| ≤ half_span`, symmetric about zero.
pub fn symmetric_grid<T: Real>(half_span: T, dtau: T) -> Vec<T> {
    let n = (half_span / dtau + T::lit(1e-9)).floor().to_i64().unwrap_or(0);
    (-n..=n).map(|m| T::lit(m as f64) * dtau).collect()
}

/// Uniform grid from `start` to `end` inclusive with step at most `max_step`.
pub fn span_grid<T: Real>(start: T, end: T, max_step: T) -> Vec<T> {
    let n = ((end - start) / max_step - T::lit(1e-9)).ceil().max(T::one()).to_usize().unwrap_or(1);
    let step = (end - start) / T::lit(n as f64);
    (0..=n)
        .map(|m| if m == n { end } else { start + T::lit(m as f64) * step })
        .collect()
}

/// One insertion in a multi-time correlator: `ρ ↦ left · ρ · right` at `time`.
#[derive(Clone)]
pub struct EventInsertion<T> {
    pub time: T,
    pub left: PairOperator<T>,
    pub right: PairOperator<T>,
}

impl<T: Real> fmt::Debug for EventInsertion<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} · ρ · {} at {}", self.left.label(), self.right.label(), self.time)
    }
}

impl<T: Real> EventInsertion<T> {
    /// Photon count on `atom`.
    pub fn count(atom: AtomIndex, time: T) -> Self {
        let down = PairOperator::new(sig(atom, 1, 2), format!("sigma12^({atom})")).expect("9x9");
        Self {
            time,
            right: down.adjoint(),
            left: down,
        }
    }

    /// Quadrature readout of `atom` at phase `theta`.
    pub fn amplitude(atom: AtomIndex, theta: T, time: T) -> Self {
        let phase = Complex::new(theta.cos(), theta.sin());
        Self {
            time,
            left: PairOperator::identity(),
            right: PairOperator::new(sig(atom, 2, 1).scale(phase), format!("e^(i theta) sigma21^({atom})"))
                .expect("9x9"),
        }
    }
}

/// `Tr(observable · ρ(at))` after applying `events` in order to `rho0`,
/// evolving with `l` between them. No normalization is applied.
pub fn multitime_correlator<T: Real>(
    l: &Liouvillian<T>,
    rho0: &StateMatrix<T>,
    events: &[EventInsertion<T>],
    observable: &PairOperator<T>,
    at: T,
) -> Result<Complex<T>, CorrelationError> {
    if l.direction() != Direction::Forward {
        return Err(LiouvilleError::WrongGenerator("correlator", "forward").into());
    }
    let times: Vec<T> = events.iter().map(|e| e.time).chain(std::iter::once(at)).collect();
    if !(times[0] >= T::zero()) || times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(CorrelationError::UnorderedEvents);
    }
    let mut ev = Evolver::new(l);
    let mut x = rho0.matrix().clone();
    let mut now = T::zero();
    for e in events {
        x = ev.evolve_matrix(&x, e.time - now)?;
        x = e.left.matrix().matmul(&x).matmul(e.right.matrix());
        now = e.time;
    }
    x = ev.evolve_matrix(&x, at - now)?;
    Ok(observable.matrix().trace_product(&x))
}

/// Steady state and stationary moments shared by all correlators of one model.
#[derive(Debug, Clone)]
pub struct Correlator<T> {
    generator: Liouvillian<T>,
    steady: StateMatrix<T>,
    populations: [T; 2],
    coherences: [Complex<T>; 2],
}

fn slot(j: AtomIndex) -> usize {
    j.number() - 1
}

fn phase<T: Real>(theta: T) -> Complex<T> {
    Complex::new(theta.cos(), theta.sin())
}

fn imag_part<T: Real>(z: Complex<T>) -> T {
    z.im.abs() / z.re.abs().max(T::one())
}

fn apply_super<T: Real>(superop: &Matrix<T>, x: &Matrix<T>) -> Matrix<T> {
    devectorize_slice(&superop.apply(&vec_slice(x)), x.rows(), x.cols())
}

fn uniform_step<T: Real>(grid: &[T]) -> T {
    match grid {
        [a, b, ..] => (*b - *a).abs(),
        _ => T::zero(),
    }
}

impl<T: Real> Correlator<T> {
    pub fn new(p: &ModelParams<T>) -> Result<Self, CorrelationError> {
        Self::from_liouvillian(&crate::liouville::build_liouvillian(p))
    }

    pub fn from_liouvillian(l: &Liouvillian<T>) -> Result<Self, CorrelationError> {
        let steady = steady_state(l)?;
        let pop = |j| steady.expect(&sig(j, 2, 2)).re;
        let coh = |j| steady.expect(&sig(j, 2, 1));
        Ok(Self {
            generator: l.clone(),
            populations: [pop(AtomIndex::One), pop(AtomIndex::Two)],
            coherences: [coh(AtomIndex::One), coh(AtomIndex::Two)],
            steady,
        })
    }

    pub fn generator(&self) -> &Liouvillian<T> {
        &self.generator
    }

    pub fn steady(&self) -> &StateMatrix<T> {
        &self.steady
    }

    /// `⟨σ₂₂ʲ⟩` in the steady state.
    pub fn population(&self, j: AtomIndex) -> T {
        self.populations[slot(j)]
    }

    /// `⟨σ₂₁ʲ⟩` in the steady state.
    pub fn coherence(&self, j: AtomIndex) -> Complex<T> {
        self.coherences[slot(j)]
    }

    /// `⟨σ₂₂ʲ⟩`, rejected when too small to normalize by.
    pub fn rate(&self, j: AtomIndex) -> Result<T, CorrelationError> {
        let n = self.population(j);
        if !(n >= T::lit(MIN_EMISSION_RATE)) {
            return Err(CorrelationError::ZeroEmissionRate {
                atom: j,
                rate: n.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(n)
    }

    /// `Re(⟨σ₂₁ʲ⟩ e^{iθ})`, rejected when negligible against `√⟨σ₂₂ʲ⟩`.
    pub fn quadrature(&self, j: AtomIndex, theta: T) -> Result<T, CorrelationError> {
        let q = (self.coherence(j) * phase(theta)).re;
        let floor = T::lit(MIN_QUADRATURE) * self.population(j).max(T::zero()).sqrt();
        if !(q.abs() >= floor) || q == T::zero() {
            return Err(CorrelationError::DegenerateQuadrature {
                atom: j,
                theta: theta.to_f64().unwrap_or(f64::NAN),
                value: q.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(q)
    }

    /// Normalized state right after a count on atom `i`.
    pub fn after_count(&self, i: AtomIndex) -> Result<Matrix<T>, CorrelationError> {
        let n = self.rate(i)?;
        let s = sig::<T>(i, 1, 2);
        Ok(s.matmul(self.steady.matrix()).matmul(&s.adjoint()).scale_real(n.recip()))
    }

    fn evolver(&self, dt: T) -> Result<Evolver<T>, CorrelationError> {
        Ok(Evolver::with_step(&self.generator, dt)?)
    }

    fn series(&self, kind: CorrelationKind, atoms: Vec<AtomIndex>, tau: Vec<T>, values: Vec<T>) -> Result<CorrelationSeries<T>, CorrelationError> {
        CorrelationSeries::new(kind, atoms, tau, values)
    }

    /// Intensity correlation `g²_ij(τ)`, `τ ≥ 0`.
    pub fn g2(&self, i: AtomIndex, j: AtomIndex, grid: &[T]) -> Result<CorrelationSeries<T>, CorrelationError> {
        check_grid(grid)?;
        if grid[0] < T::zero() {
            return Err(CorrelationError::InvalidGrid("g2 needs τ ≥ 0".into()));
        }
        let nj = self.rate(j)?;
        let start = self.after_count(i)?;
        let states = self.evolver(uniform_step(grid))?.evolve_along(&start, grid)?;
        let obs = sig::<T>(j, 2, 2);
        let mut diag = StateDiagnostics::default();
        let mut imag = T::zero();
        let mut values = Vec::with_capacity(grid.len());
        for rho in &states {
            diag.record_state(rho);
            let z = obs.trace_product(rho) / nj;
            imag = imag.max(imag_part(z));
            values.push(z.re);
        }
        let mut s = self.series(CorrelationKind::G2, vec![i, j], grid.to_vec(), values)?;
        s.imag_residue = imag;
        s.diagnostics = diag;
        Ok(s)
    }

    /// Intensity–amplitude correlation `g¹·⁵_ij(τ, θ)` on a grid that may
    /// include negative delays (quadrature before the count).
    pub fn g15(&self, i: AtomIndex, j: AtomIndex, theta: T, grid: &[T]) -> Result<CorrelationSeries<T>, CorrelationError> {
        check_grid(grid)?;
        let ni = self.rate(i)?;
        let qj = self.quadrature(j, theta)?;
        let ph = phase(theta);
        let dt = uniform_step(grid);
        let mut diag = StateDiagnostics::default();
        let mut values = Vec::with_capacity(grid.len());

        let negative: Vec<T> = grid.iter().filter(|t| **t < T::zero()).map(|t| -*t).rev().collect();
        if !negative.is_empty() {
            let start = self.steady.matrix().matmul(&sig(j, 2, 1)).scale(ph);
            let obs = sig::<T>(i, 2, 2);
            let out = self.evolver(dt)?.evolve_along(&start, &negative)?;
            values.extend(out.iter().rev().map(|x| obs.trace_product(x).re / (ni * qj)));
        }
        let positive: Vec<T> = grid.iter().copied().filter(|t| *t >= T::zero()).collect();
        if !positive.is_empty() {
            let start = self.after_count(i)?;
            let obs = sig::<T>(j, 2, 1).scale(ph);
            let out = self.evolver(dt)?.evolve_along(&start, &positive)?;
            for rho in &out {
                diag.record_state(rho);
                values.push(obs.trace_product(rho).re / qj);
            }
        }
        let mut s = self.series(CorrelationKind::G15, vec![i, j], grid.to_vec(), values)?;
        s.theta = Some(theta);
        s.diagnostics = diag;
        Ok(s)
    }

    /// Shared three-time loop: `second(ρᵢ(τ))` is evolved over `T − τ` and
    /// read out with `σ₂₂ᵏ`.
    fn three_time(
        &self,
        i: AtomIndex,
        k: AtomIndex,
        grid: &[T],
        t_sep: T,
        second: impl Fn(&Matrix<T>) -> Matrix<T>,
    ) -> Result<(Vec<Complex<T>>, StateDiagnostics), CorrelationError> {
        check_grid(grid)?;
        if grid[0] < T::zero() || *grid.last().expect("nonempty") > t_sep {
            return Err(CorrelationError::InvalidGrid("three-time grid must lie in [0, T]".into()));
        }
        let mut ev = self.evolver(uniform_step(grid))?;
        let start = self.after_count(i)?;
        let states = ev.evolve_along(&start, grid)?;
        let obs = sig::<T>(k, 2, 2);
        let mut diag = StateDiagnostics::default();
        let mut out = Vec::with_capacity(grid.len());
        for (tau, rho) in grid.iter().zip(&states) {
            diag.record_state(rho);
            let y = ev.evolve_matrix(&second(rho), t_sep - *tau)?;
            out.push(obs.trace_product(&y));
        }
        Ok((out, diag))
    }

    /// Three-time intensity correlation `g³_ijk(τ, T)`, counts at `0`, `τ`, `T`.
    pub fn g3(&self, i: AtomIndex, j: AtomIndex, k: AtomIndex, grid: &[T], t_sep: T) -> Result<CorrelationSeries<T>, CorrelationError> {
        let norm = self.rate(j)? * self.rate(k)?;
        let s = sig::<T>(j, 1, 2);
        let sd = s.adjoint();
        let (raw, diag) = self.three_time(i, k, grid, t_sep, |rho| s.matmul(rho).matmul(&sd))?;
        let imag = raw.iter().fold(T::zero(), |m, z| m.max(imag_part(*z / norm)));
        let values = raw.iter().map(|z| z.re / norm).collect();
        let mut out = self.series(CorrelationKind::G3, vec![i, j, k], grid.to_vec(), values)?;
        out.t_sep = Some(t_sep);
        out.imag_residue = imag;
        out.diagnostics = diag;
        Ok(out)
    }

    /// Count on `i` at `0`, quadrature of `j` at `τ`, count on `k` at `T`.
    pub fn g25(
        &self,
        i: AtomIndex,
        j: AtomIndex,
        k: AtomIndex,
        theta: T,
        grid: &[T],
        t_sep: T,
    ) -> Result<CorrelationSeries<T>, CorrelationError> {
        let norm = self.rate(k)? * self.quadrature(j, theta)?;
        let amp = sig::<T>(j, 2, 1).scale(phase(theta));
        let (raw, diag) = self.three_time(i, k, grid, t_sep, |rho| rho.matmul(&amp))?;
        let values = raw.iter().map(|z| z.re / norm).collect();
        let mut out = self.series(CorrelationKind::G25, vec![i, j, k], grid.to_vec(), values)?;
        out.theta = Some(theta);
        out.t_sep = Some(t_sep);
        out.diagnostics = diag;
        Ok(out)
    }

    /// `g²_ik(T)` at a single delay.
    pub fn g2_at(&self, i: AtomIndex, k: AtomIndex, t: T) -> Result<T, CorrelationError> {
        Ok(self.g2(i, k, &[t])?.values[0])
    }

    /// Max, min and mean of `g²·⁵_ijk(τ,T,θ)/g²_ik(T)` over
    /// `τ ∈ [T/2 − w, T/2 + w] ∩ [0, T]`, for each `T` in `t_grid`.
    pub fn amplitude_ratio(
        &self,
        i: AtomIndex,
        j: AtomIndex,
        k: AtomIndex,
        theta: T,
        t_grid: &[T],
        window: T,
    ) -> Result<[CorrelationSeries<T>; 3], CorrelationError> {
        check_grid(t_grid)?;
        if !(t_grid[0] > T::zero()) || !(window > T::zero()) {
            return Err(CorrelationError::InvalidGrid("separations and window must be positive".into()));
        }
        let ni = self.rate(i)?;
        let nk = self.rate(k)?;
        let qj = self.quadrature(j, theta)?;
        let amp = sig::<T>(j, 2, 1).scale(phase(theta));
        let down = sig::<T>(i, 1, 2);
        let obs = sig::<T>(k, 2, 2);
        let jumped = down.matmul(self.steady.matrix()).matmul(&down.adjoint()).scale_real(ni.recip());
        let half = T::lit(0.5);
        let step = window / T::lit(SAMPLES_PER_PERIOD as f64);
        let mut ev = self.evolver(step)?;
        let mut diag = StateDiagnostics::default();
        let (mut hi, mut lo, mut mean) = (Vec::new(), Vec::new(), Vec::new());
        for &t_sep in t_grid {
            let a = (t_sep * half - window).max(T::zero());
            let b = (t_sep * half + window).min(t_sep);
            let taus = span_grid(a, b, step);
            let lead = ev.exponential(a)?;
            let tail_len = t_sep - b;
            let tail = if (tail_len - a).abs() <= T::epsilon() * t_sep * T::lit(16.0) {
                lead.clone()
            } else {
                ev.exponential(tail_len)?
            };
            let rho_a = apply_super(&lead, &jumped);
            let g2t = obs.trace_product(&apply_super(&tail, &ev.evolve_matrix(&rho_a, b - a)?)).re / nk;
            let states = ev.evolve_along(&rho_a, &taus.iter().map(|t| *t - a).collect::<Vec<_>>())?;
            let mut values = Vec::with_capacity(taus.len());
            for (tau, rho) in taus.iter().zip(&states) {
                diag.record_state(rho);
                let y = apply_super(&tail, &ev.evolve_matrix(&rho.matmul(&amp), b - *tau)?);
                values.push(obs.trace_product(&y).re / (nk * qj * g2t));
            }
            let n = T::lit(values.len() as f64);
            hi.push(values.iter().copied().fold(T::neg_infinity(), T::max));
            lo.push(values.iter().copied().fold(T::infinity(), T::min));
            mean.push(values.iter().copied().fold(T::zero(), |s, v| s + v) / n);
        }
        let make = |values: Vec<T>| -> Result<CorrelationSeries<T>, CorrelationError> {
            let mut s = self.series(CorrelationKind::AmplitudeRatio, vec![i, j, k], t_grid.to_vec(), values)?;
            s.theta = Some(theta);
            s.diagnostics = diag;
            Ok(s)
        };
        Ok([make(hi)?, make(lo)?, make(mean)?])
    }
}

/// Which delays of a series a spectral estimate looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Half {
    Negative,
    Positive,
    All,
}

/// Angular frequency of the strongest nonzero-frequency periodogram peak of
/// the mean-removed samples in `half`, refined by a parabola through the peak
/// bin and its neighbours. The signal is zero-padded to eight times its length.
pub fn dominant_frequency<T: Real>(series: &CorrelationSeries<T>, half: Half) -> Result<T, CorrelationError> {
    let (tau, values) = series.select(|t| match half {
        Half::Negative => t < T::zero(),
        Half::Positive => t > T::zero(),
        Half::All => true,
    });
    let n = values.len();
    if n < 16 {
        return Err(CorrelationError::TooFewSamples(n));
    }
    let dt = (tau[n - 1] - tau[0]) / T::lit((n - 1) as f64);
    let dt_f = dt.to_f64().unwrap_or(f64::NAN);
    if tau
        .windows(2)
        .any(|w| ((w[1] - w[0]).to_f64().unwrap_or(f64::NAN) - dt_f).abs() > 1e-6 * dt_f)
    {
        return Err(CorrelationError::InvalidGrid("spectral estimate needs a uniform grid".into()));
    }
    let samples: Vec<f64> = values.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let len = 8 * n;
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let power: Vec<f64> = buf[..=len / 2].iter().map(|z| z.norm_sqr()).collect();

    let (peak, top) = power
        .iter()
        .enumerate()
        .skip(1)
        .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best });
    let mut sorted = power[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(top > 0.0) || !(top >= 3.0 * median) || top <= f64::EPSILON * power.iter().sum::<f64>() {
        return Err(CorrelationError::NoOscillation);
    }
    let shift = if peak + 1 < power.len() {
        let (a, b, c) = (power[peak - 1], power[peak], power[peak + 1]);
        let denom = a - 2.0 * b + c;
        if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 }
    } else {
        0.0
    };
    let omega = 2.0 * std::f64::consts::PI * (peak as f64 + shift) / (len as f64 * dt_f);
    Ok(T::lit(omega))
}

macro_rules! free_fn {
    ($(#[$doc:meta])* $name:ident ( $($arg:ident : $ty:ty),* ) -> $out:ty) => {
        $(#[$doc])*
        pub fn $name<T: Real>(l: &Liouvillian<T>, $($arg: $ty),*) -> Result<$out, CorrelationError> {
            Correlator::from_liouvillian(l)?.$name($($arg),*)
        }
    };
}

free_fn!(
    /// See [`Correlator::g2`].
    g2(i: AtomIndex, j: AtomIndex, grid: &[T]) -> CorrelationSeries<T>
);
free_fn!(
    /// See [`Correlator::g15`].
    g15(i: AtomIndex, j: AtomIndex, theta: T, grid: &[T]) -> CorrelationSeries<T>
);
free_fn!(
    /// See [`Correlator::g3`].
    g3(i: AtomIndex, j: AtomIndex, k: AtomIndex, grid: &[T], t_sep: T) -> CorrelationSeries<T>
);
free_fn!(
    /// See [`Correlator::g25`].
    g25(i: AtomIndex, j: AtomIndex, k: AtomIndex, theta: T, grid: &[T], t_sep: T) -> CorrelationSeries<T>
);
free_fn!(
    /// See [`Correlator::amplitude_ratio`].
    amplitude_ratio(i: AtomIndex, j: AtomIndex, k: AtomIndex, theta: T, t_grid: &[T], window: T) -> [CorrelationSeries<T>; 3]
);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::build_liouvillian;
    use crate::model::AtomIndex::{One, Two};
    use std::f64::consts::FRAC_PI_2;

    fn reference() -> ModelParams<f64> {
        ModelParams::reference()
    }

    fn corr(p: &ModelParams<f64>) -> Correlator<f64> {
        Correlator::new(p).unwrap()
    }

    fn op(j: AtomIndex, k: usize, l: usize) -> PairOperator<f64> {
        crate::model::sigma(j, k, l).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    #[test]
    fn multitime_trivial_cases() {
        let c = corr(&reference());
        let l = c.generator();
        let ss = c.steady();
        let none = multitime_correlator(l, ss, &[], &PairOperator::identity(), 3.0).unwrap();
        assert!((none - Complex::new(1.0, 0.0)).norm() < 1e-12);
        let pop = multitime_correlator(l, ss, &[], &op(One, 2, 2), 0.0).unwrap();
        assert!((pop.re - c.population(One)).abs() < 1e-18);
        let after = multitime_correlator(l, ss, &[EventInsertion::count(One, 0.0)], &op(One, 2, 2), 0.0).unwrap();
        assert_eq!(after.norm(), 0.0);
        let bad = [EventInsertion::count(One, 1.0), EventInsertion::count(Two, 0.5)];
        assert_eq!(
            multitime_correlator(l, ss, &bad, &op(One, 2, 2), 2.0),
            Err(CorrelationError::UnorderedEvents)
        );
        assert_eq!(
            multitime_correlator(l, ss, &bad[..1], &op(One, 2, 2), 0.5),
            Err(CorrelationError::UnorderedEvents)
        );
    }

    #[test]
    fn g2_against_multitime_engine() {
        let c = corr(&reference());
        let grid = [0.0, 0.37, 1.1, 4.0];
        for (i, j) in [(One, One), (One, Two), (Two, One)] {
            let s = c.g2(i, j, &grid).unwrap();
            for (t, v) in grid.iter().zip(&s.values) {
                let raw = multitime_correlator(c.generator(), c.steady(), &[EventInsertion::count(i, 0.0)], &op(j, 2, 2), *t)
                    .unwrap();
                let want = raw.re / (c.population(i) * c.population(j));
                assert!(rel(*v, want) < 1e-9, "{i}{j} τ={t}: {v} vs {want}");
            }
            assert!(s.imag_residue <= 1e-10);
            assert!(s.diagnostics.passes());
        }
    }

    #[test]
    fn g2_limits() {
        let c = corr(&reference());
        assert!(c.g2(One, One, &[0.0]).unwrap().values[0].abs() <= 1e-10);
        assert!(c.g2(One, Two, &[0.0]).unwrap().values[0] > 1.0);
        assert!((c.g2(One, Two, &[50.0]).unwrap().values[0] - 1.0).abs() < 1e-3);
        assert!(matches!(c.g2(One, Two, &[-1.0, 0.0]), Err(CorrelationError::InvalidGrid(_))));
    }

    #[test]
    fn g15_against_multitime_engine() {
        let c = corr(&reference());
        let theta = 0.7;
        let grid = [-3.2, -0.5, 0.0, 0.5, 2.9];
        for (i, j) in [(One, One), (One, Two)] {
            let s = c.g15(i, j, theta, &grid).unwrap();
            let q = (c.coherence(j) * Complex::from_polar(1.0, theta)).re;
            let ni = c.population(i);
            for (t, v) in grid.iter().zip(&s.values) {
                let raw = if *t >= 0.0 {
                    let events = [EventInsertion::count(i, 0.0)];
                    let obs = PairOperator::new(sig(j, 2, 1).scale(Complex::from_polar(1.0, theta)), "amp").unwrap();
                    multitime_correlator(c.generator(), c.steady(), &events, &obs, *t).unwrap()
                } else {
                    let events = [EventInsertion::amplitude(j, theta, 0.0)];
                    multitime_correlator(c.generator(), c.steady(), &events, &op(i, 2, 2), -*t).unwrap()
                };
                let want = raw.re / (ni * q);
                assert!(rel(*v, want) < 1e-9, "{i}{j} τ={t}: {v} vs {want}");
            }
        }
    }

    #[test]
    fn g15_negative_branch_vanishes_at_origin() {
        let c = corr(&reference());
        let s = c.g15(One, One, FRAC_PI_2, &[-1e-12, 0.0]).unwrap();
        assert!(s.values[0].abs() < 1e-4, "{}", s.values[0]);
    }

    #[test]
    fn independent_atoms_decouple() {
        let c = corr(&reference().with_v12(0.0));
        let grid = symmetric_grid(10.0, 0.1);
        let pos = forward_grid(10.0, 0.1);
        for (i, j) in [(One, Two), (Two, One)] {
            let g2 = c.g2(i, j, &pos).unwrap();
            assert!(g2.values.iter().all(|v| (v - 1.0).abs() <= 1e-8));
            let g15 = c.g15(i, j, FRAC_PI_2, &grid).unwrap();
            let worst = g15.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-8, "{i}{j}: {worst:e}");
        }
    }

    #[test]
    fn g15_tends_to_one() {
        let c = corr(&reference());
        let s = c.g15(One, One, FRAC_PI_2, &[-60.0, 60.0]).unwrap();
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-3), "{:?}", s.values);
    }

    #[test]
    fn three_time_against_multitime_engine() {
        let c = corr(&reference());
        let t_sep = 6.0;
        let grid = [0.0, 0.4, 2.5, 6.0];
        let theta = FRAC_PI_2;
        for (i, j, k) in [(One, One, Two), (One, Two, Two), (Two, One, One)] {
            let g3 = c.g3(i, j, k, &grid, t_sep).unwrap();
            let g25 = c.g25(i, j, k, theta, &grid, t_sep).unwrap();
            let (ni, nj, nk) = (c.population(i), c.population(j), c.population(k));
            let q = -c.coherence(j).im;
            for (m, t) in grid.iter().enumerate() {
                let counts = [EventInsertion::count(i, 0.0), EventInsertion::count(j, *t)];
                let raw = multitime_correlator(c.generator(), c.steady(), &counts, &op(k, 2, 2), t_sep).unwrap();
                let want = raw.re / (ni * nj * nk);
                assert!(rel(g3.values[m], want) < 1e-9, "g3 τ={t}");

                let mixed = [EventInsertion::count(i, 0.0), EventInsertion::amplitude(j, theta, *t)];
                let raw = multitime_correlator(c.generator(), c.steady(), &mixed, &op(k, 2, 2), t_sep).unwrap();
                let want = raw.re / (ni * nk * q);
                assert!(rel(g25.values[m], want) < 1e-9, "g25 τ={t}");
            }
            assert!(g3.imag_residue <= 1e-10, "{:e}", g3.imag_residue);
        }
    }

    #[test]
    fn g3_boundaries() {
        let c = corr(&reference());
        let t = 5.0;
        let grid = span_grid(0.0, t, 0.05);
        let g112 = c.g3(One, One, Two, &grid, t).unwrap();
        let g122 = c.g3(One, Two, Two, &grid, t).unwrap();
        assert!(g112.values[0].abs() <= 1e-10);
        assert!(g122.values.last().unwrap().abs() <= 1e-10);
        assert!(*g112.values.last().unwrap() > 0.0);
        assert!(g122.values[0] > 1.0);
        assert!(matches!(c.g3(One, One, Two, &[0.0, 6.0], t), Err(CorrelationError::InvalidGrid(_))));
    }

    #[test]
    fn g3_at_long_separation_reduces_to_g2() {
        let c = corr(&reference());
        let taus = [0.3, 1.0, 2.2];
        let g3 = c.g3(One, One, Two, &taus, 60.0).unwrap();
        let g2 = c.g2(One, One, &taus).unwrap();
        for (a, b) in g3.values.iter().zip(&g2.values) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn exchange_symmetry() {
        let c = corr(&reference());
        let t = 4.0;
        let grid = span_grid(0.0, t, 0.1);
        let close = |a: &CorrelationSeries<f64>, b: &CorrelationSeries<f64>| {
            a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() <= 1e-10 * x.abs().max(1.0))
        };
        assert!(close(&c.g2(One, Two, &grid).unwrap(), &c.g2(Two, One, &grid).unwrap()));
        assert!(close(&c.g3(One, One, Two, &grid, t).unwrap(), &c.g3(Two, Two, One, &grid, t).unwrap()));
        assert!(close(&c.g3(One, Two, Two, &grid, t).unwrap(), &c.g3(Two, One, One, &grid, t).unwrap()));
        let th = FRAC_PI_2;
        assert!(close(&c.g25(One, One, Two, th, &grid, t).unwrap(), &c.g25(Two, Two, One, th, &grid, t).unwrap()));
        assert!(close(&c.g25(One, Two, Two, th, &grid, t).unwrap(), &c.g25(Two, One, One, th, &grid, t).unwrap()));
    }

    #[test]
    fn amplitude_ratio_is_g25_over_g2() {
        let c = corr(&reference());
        let w = reference().rabi_period();
        let ts = [6.0, 6.3];
        let [hi, lo, mean] = c.amplitude_ratio(One, Two, Two, FRAC_PI_2, &ts, w).unwrap();
        for (m, t) in ts.iter().enumerate() {
            let taus = span_grid(t / 2.0 - w, t / 2.0 + w, w / 40.0);
            let g25 = c.g25(One, Two, Two, FRAC_PI_2, &taus, *t).unwrap();
            let g2 = c.g2_at(One, Two, *t).unwrap();
            let ratios: Vec<f64> = g25.values.iter().map(|v| v / g2).collect();
            let avg = ratios.iter().sum::<f64>() / ratios.len() as f64;
            let max = ratios.iter().copied().fold(f64::MIN, f64::max);
            let min = ratios.iter().copied().fold(f64::MAX, f64::min);
            assert!(rel(mean.values[m], avg) < 1e-9);
            assert!(rel(hi.values[m], max) < 1e-9);
            assert!(rel(lo.values[m], min) < 1e-9);
            assert!(hi.values[m] >= mean.values[m] && mean.values[m] >= lo.values[m]);
        }
    }

    #[test]
    fn dark_parameters_are_rejected() {
        let p = ModelParams::<f64>::real(0.2, 5.0, 0.0, 0.0, 0.0).unwrap();
        let c = corr(&p);
        assert!(matches!(c.g2(One, Two, &[0.0]), Err(CorrelationError::ZeroEmissionRate { .. })));
    }

    #[test]
    fn degenerate_quadrature_is_rejected() {
        let c = corr(&reference());
        let z = c.coherence(Two);
        let theta = FRAC_PI_2 - z.arg();
        assert!(matches!(
            c.g15(One, Two, theta, &[0.0]),
            Err(CorrelationError::DegenerateQuadrature { .. })
        ));
    }

    #[test]
    fn grids() {
        let g = forward_grid(1.0, 0.25);
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let s = symmetric_grid(0.5, 0.25);
        assert_eq!(s, vec![-0.5, -0.25, 0.0, 0.25, 0.5]);
        let sp = span_grid(0.0, 1.0, 0.3);
        assert_eq!(sp.len(), 5);
        assert_eq!(*sp.last().unwrap(), 1.0);
    }

    fn synthetic(f: impl Fn(f64) -> f64, n: usize, dt: f64) -> CorrelationSeries<f64> {
        let tau: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
        let values = tau.iter().map(|t| f(*t)).collect();
        CorrelationSeries::new(CorrelationKind::G2, vec![One, Two], tau, values).unwrap()
    }

    #[test]
    fn dominant_frequency_of_cosine() {
        let s = synthetic(|t| (5.0 * t).cos(), 800, 0.05);
        let w = dominant_frequency(&s, Half::All).unwrap();
        assert!((w - 5.0).abs() < 0.05, "{w}");
    }

    #[test]
    fn dominant_frequency_rejections() {
        let flat = synthetic(|_| 2.0, 100, 0.1);
        assert_eq!(dominant_frequency(&flat, Half::All), Err(CorrelationError::NoOscillation));
        let short = synthetic(|t| t.sin(), 15, 0.1);
        assert_eq!(dominant_frequency(&short, Half::All), Err(CorrelationError::TooFewSamples(15)));
        assert_eq!(
            dominant_frequency(&short, Half::Negative),
            Err(CorrelationError::TooFewSamples(0))
        );
    }

    #[test]
    fn series_validation() {
        assert!(CorrelationSeries::new(CorrelationKind::G2, vec![One], vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(CorrelationSeries::new(CorrelationKind::G2, vec![One], vec![0.0], vec![f64::NAN]).is_err());
        assert!(CorrelationSeries::<f64>::new(CorrelationKind::G2, vec![One], vec![], vec![]).is_err());
    }

    #[test]
    fn free_functions_match_methods() {
        let l = build_liouvillian(&reference());
        let a = g2(&l, One, Two, &[0.0, 1.0]).unwrap();
        let b = corr(&reference()).g2(One, Two, &[0.0, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_precision_g2() {
        let c = Correlator::<f32>::new(&ModelParams::reference()).unwrap();
        let s = c.g2(One, Two, &[0.0, 50.0]).unwrap();
        assert!(s.values[0] > 1.0);
        assert!((s.values[1] - 1.0).abs() < 0.05, "{:?}", s.values);
    }
}
