//! Quantum-jump unraveling of the pair master equation and photon-pair
//! statistics from the recorded clicks.
//!
//! Each trajectory evolves a 9-component vector with the no-jump propagator
//! `exp(−i H_eff t)`, `H_eff = H − (i/2) Σ C†C`, on a grid of ticks
//! (`step / 1024`). A uniform threshold `r` is drawn after every jump and the
//! next jump happens at the first tick where `‖ψ‖² < r`; the search uses
//! repeated squares of the one-tick propagator. The jump channel is drawn
//! with weights `‖C ψ‖²`. Only lower-transition decays are recorded as clicks.
//!
//! Random numbers: trajectory `k` of a batch with seed `s` uses a SplitMix64
//! generator whose state is the `k`-th output (counting from 0) of a SplitMix64
//! generator started from state `s`. Uniform variates are `(u >> 11)·2⁻⁵³`.

use std::io::{self, Write};

use num_complex::Complex;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::{eigh, expm, AlgebraError, Matrix};
use crate::correlators::{CorrelationKind, CorrelationSeries};
use crate::liouville::{build_liouvillian, steady_state, LiouvilleError};
use crate::model::{channel_at, jump_operators, pair_hamiltonian, AtomIndex, Channel, ModelParams, LEVELS, PAIR_DIM};

/// Ticks per step, as a power of two.
pub const TICK_BITS: u32 = 10;
/// Largest accepted step in units of `1/max(1, Ω_R)`.
pub const MAX_STEP: f64 = 0.01;
/// Fewest expected uncorrelated pairs per bin for a pair-statistics estimate.
pub const MIN_EXPECTED_PAIRS: f64 = 50.0;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McwfError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Liouville(#[from] LiouvilleError),
    #[error("step {step} exceeds {limit:e} = 0.01/max(1, Ω_R)")]
    StepTooLarge { step: f64, limit: f64 },
    #[error("jump sampling failed: state norm {norm:e} at t = {time}")]
    NormUnderflow { norm: f64, time: f64 },
    #[error("invalid trajectory input: {0}")]
    InvalidInput(String),
    #[error("bin at τ = {tau} expects only {expected:.2} uncorrelated pairs, need {MIN_EXPECTED_PAIRS}")]
    InsufficientStatistics { tau: f64, expected: f64 },
}

/// A recorded photon from a lower-transition decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickRecord {
    /// Index into the fixed six-operator jump ordering.
    pub channel: usize,
    pub atom: AtomIndex,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    /// Every trajectory starts from this vector (normalized on use).
    Pure(Vec<Complex<f64>>),
    /// Each trajectory starts in an eigenvector of the steady state, drawn with
    /// its eigenvalue as probability, so the ensemble is stationary from `t = 0`.
    SteadyEnsemble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McwfConfig {
    pub trajectories: usize,
    pub duration: f64,
    pub step: f64,
    pub seed: u64,
    pub initial: InitialState,
    /// Spacing of the population samples, rounded to whole steps.
    pub sample_interval: f64,
}

impl McwfConfig {
    pub fn new(trajectories: usize, duration: f64, step: f64, seed: u64) -> Self {
        Self {
            trajectories,
            duration,
            step,
            seed,
            initial: InitialState::SteadyEnsemble,
            sample_interval: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub seed: u64,
    pub count: usize,
    pub duration: f64,
    pub step: f64,
    /// Click records per trajectory, in time order.
    pub records: Vec<Vec<ClickRecord>>,
    /// Per-trajectory time average of `⟨σ₂₂ʲ⟩` over the population samples.
    pub populations: Vec<[f64; 2]>,
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            std_error: (var / n).sqrt(),
        }
    }

    /// `|mean − target|` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.std_error
    }
}

impl TrajectoryBatch {
    pub fn total_clicks(&self, atom: AtomIndex) -> usize {
        self.records.iter().flatten().filter(|c| c.atom == atom).count()
    }

    /// Clicks per unit time on `atom`, with a Poisson standard error.
    pub fn click_rate(&self, atom: AtomIndex) -> Estimate {
        let n = self.total_clicks(atom) as f64;
        let exposure = self.count as f64 * self.duration;
        Estimate {
            mean: n / exposure,
            std_error: n.max(1.0).sqrt() / exposure,
        }
    }

    /// Ensemble average of the time-averaged excited population of `atom`.
    pub fn population(&self, atom: AtomIndex) -> Estimate {
        Estimate::of(self.populations.iter().map(|p| p[atom.number() - 1]))
    }

    /// One line per click: `trajectory_index,channel,atom,time`, after a header.
    pub fn write_clicks(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "trajectory_index,channel,atom,time")?;
        for (k, clicks) in self.records.iter().enumerate() {
            for c in clicks {
                writeln!(out, "{k},{},{},{:.12e}", c.channel, c.atom.number(), c.time)?;
            }
        }
        Ok(())
    }
}

/// Generator for trajectory `index` of a batch seeded with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> SplitMix64 {
    let state = SplitMix64::seed_from_u64(seed.wrapping_add(index.wrapping_mul(GOLDEN))).next_u64();
    SplitMix64::seed_from_u64(state)
}

fn uniform(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn norm2(v: &[Complex<f64>]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn excited_population(psi: &[Complex<f64>], atom: AtomIndex) -> f64 {
    let weight: f64 = (0..PAIR_DIM)
        .filter(|idx| match atom {
            AtomIndex::One => idx / LEVELS == 1,
            AtomIndex::Two => idx % LEVELS == 1,
        })
        .map(|idx| psi[idx].norm_sqr())
        .sum();
    weight / norm2(psi)
}

struct Unraveling {
    /// `powers[b]` advances by `2^b` ticks.
    powers: Vec<Matrix<f64>>,
    jumps: Vec<Matrix<f64>>,
    tick: f64,
}

struct Outcome {
    clicks: Vec<ClickRecord>,
    population: [f64; 2],
}

impl Unraveling {
    fn new(p: &ModelParams<f64>, step: f64, max_ticks: u64) -> Result<Self, McwfError> {
        let jumps: Vec<Matrix<f64>> = jump_operators(p).into_iter().map(|c| c.into_matrix()).collect();
        let mut decay = Matrix::zeros(PAIR_DIM, PAIR_DIM);
        for c in &jumps {
            decay += &c.adjoint().matmul(c);
        }
        let h_eff = &pair_hamiltonian(p).into_matrix() - &decay.scale(Complex::new(0.0, 0.5));
        let tick = step / f64::from(1u32 << TICK_BITS);
        let mut powers = vec![expm(&h_eff.scale(Complex::new(0.0, -tick)))?];
        while (1u64 << (powers.len() - 1)) < max_ticks {
            let last = powers.last().expect("nonempty");
            powers.push(last.matmul(last));
        }
        Ok(Self { powers, jumps, tick })
    }

    fn run(
        &self,
        psi0: &[Complex<f64>],
        rng: &mut SplitMix64,
        total: u64,
        sample_ticks: u64,
    ) -> Result<Outcome, McwfError> {
        let scale = norm2(psi0).sqrt();
        let mut psi: Vec<Complex<f64>> = psi0.iter().map(|z| z / scale).collect();
        let mut threshold = 1.0 - uniform(rng);
        let mut now = 0u64;
        let mut next_sample = sample_ticks;
        let mut sums = [0.0; 2];
        let mut samples = 0usize;
        let mut clicks = Vec::new();

        while now < total {
            let stop = next_sample.min(total);
            let mut budget = stop - now;
            for b in (0..self.powers.len()).rev() {
                let span = 1u64 << b;
                if span <= budget {
                    let cand = self.powers[b].apply(&psi);
                    if norm2(&cand) >= threshold {
                        psi = cand;
                        now += span;
                        budget -= span;
                    }
                }
            }
            if now == stop {
                if stop == next_sample {
                    for atom in AtomIndex::BOTH {
                        sums[atom.number() - 1] += excited_population(&psi, atom);
                    }
                    samples += 1;
                    next_sample += sample_ticks;
                }
                continue;
            }

            psi = self.powers[0].apply(&psi);
            now += 1;
            let time = now as f64 * self.tick;
            let weights: Vec<f64> = self.jumps.iter().map(|c| norm2(&c.apply(&psi))).collect();
            let total_weight: f64 = weights.iter().sum();
            if !(total_weight > 1e-300) || !total_weight.is_finite() {
                return Err(McwfError::NormUnderflow {
                    norm: norm2(&psi),
                    time,
                });
            }
            let mut pick = uniform(rng) * total_weight;
            let channel = weights
                .iter()
                .position(|w| {
                    pick -= w;
                    pick < 0.0
                })
                .unwrap_or_else(|| weights.iter().rposition(|w| *w > 0.0).expect("positive weight"));
            let jumped = self.jumps[channel].apply(&psi);
            let s = norm2(&jumped).sqrt();
            psi = jumped.into_iter().map(|z| z / s).collect();
            threshold = 1.0 - uniform(rng);
            if let Some((atom, Channel::LowerDecay)) = channel_at(channel) {
                clicks.push(ClickRecord { channel, atom, time });
            }
        }
        let n = samples.max(1) as f64;
        Ok(Outcome {
            clicks,
            population: [sums[0] / n, sums[1] / n],
        })
    }
}

/// Runs `config.trajectories` independent trajectories in parallel.
pub fn mcwf_run(p: &ModelParams<f64>, config: &McwfConfig) -> Result<TrajectoryBatch, McwfError> {
    let limit = MAX_STEP / p.rabi().max(1.0);
    if !(config.step > 0.0) {
        return Err(McwfError::InvalidInput(format!("step {} must be positive", config.step)));
    }
    if config.step > limit * (1.0 + 1e-12) {
        return Err(McwfError::StepTooLarge {
            step: config.step,
            limit,
        });
    }
    if !(config.duration > 0.0) || !config.duration.is_finite() {
        return Err(McwfError::InvalidInput(format!("duration {} must be positive", config.duration)));
    }
    let steps = (config.duration / config.step).round().max(1.0) as u64;
    let per_step = 1u64 << TICK_BITS;
    let total = steps * per_step;
    let sample_steps = ((config.sample_interval / config.step).round() as u64).clamp(1, steps);
    let sample_ticks = sample_steps * per_step;
    let unravel = Unraveling::new(p, config.step, sample_ticks)?;

    let starts = initial_states(p, &config.initial)?;
    let outcomes: Vec<Outcome> = (0..config.trajectories as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = trajectory_rng(config.seed, k);
            let psi0 = pick_start(&starts, &mut rng);
            unravel.run(psi0, &mut rng, total, sample_ticks)
        })
        .collect::<Result<_, _>>()?;

    Ok(TrajectoryBatch {
        seed: config.seed,
        count: config.trajectories,
        duration: steps as f64 * config.step,
        step: config.step,
        populations: outcomes.iter().map(|o| o.population).collect(),
        records: outcomes.into_iter().map(|o| o.clicks).collect(),
    })
}

/// Candidate start vectors with cumulative probabilities.
fn initial_states(p: &ModelParams<f64>, initial: &InitialState) -> Result<Vec<(f64, Vec<Complex<f64>>)>, McwfError> {
    match initial {
        InitialState::Pure(v) => {
            if v.len() != PAIR_DIM || !(norm2(v) > 0.0) {
                return Err(McwfError::InvalidInput("initial vector must be a nonzero 9-vector".into()));
            }
            Ok(vec![(1.0, v.clone())])
        }
        InitialState::SteadyEnsemble => {
            let rho = steady_state(&build_liouvillian(p))?;
            let e = eigh(rho.matrix())?;
            let mut acc = 0.0;
            Ok(e.eigenvalues
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(k, w)| {
                    acc += w;
                    (acc, e.eigenvectors.column_vec(k))
                })
                .collect())
        }
    }
}

fn pick_start<'a>(starts: &'a [(f64, Vec<Complex<f64>>)], rng: &mut SplitMix64) -> &'a [Complex<f64>] {
    let total = starts.last().map_or(1.0, |s| s.0);
    let u = uniform(rng) * total;
    &starts.iter().find(|(c, _)| u < *c).unwrap_or(&starts[starts.len() - 1]).1
}

/// Pair-delay histogram of clicks on atom `i` followed by clicks on atom `j`,
/// normalized by the count expected for uncorrelated clicks at the observed
/// rate of `j`, restricted to delays that fit inside each trajectory.
/// Bins are `[τ, τ + bin_width)` for each `τ` in `tau_grid`.
pub fn estimate_g2(
    batch: &TrajectoryBatch,
    i: AtomIndex,
    j: AtomIndex,
    tau_grid: &[f64],
    bin_width: f64,
) -> Result<CorrelationSeries<f64>, McwfError> {
    if tau_grid.is_empty() || !(bin_width > 0.0) || tau_grid.iter().any(|t| *t < 0.0) {
        return Err(McwfError::InvalidInput("bins need nonnegative starts and positive width".into()));
    }
    let d = batch.duration;
    let rate_j = batch.total_clicks(j) as f64 / (batch.count as f64 * d);
    let mut observed = vec![0usize; tau_grid.len()];
    let mut expected = vec![0.0; tau_grid.len()];
    for clicks in &batch.records {
        for (a, first) in clicks.iter().enumerate().filter(|(_, c)| c.atom == i) {
            for (b, tau) in tau_grid.iter().enumerate() {
                let lo = (first.time + tau).min(d);
                let hi = (first.time + tau + bin_width).min(d);
                expected[b] += rate_j * (hi - lo);
            }
            for second in clicks.iter().skip(a + 1).filter(|c| c.atom == j) {
                let delay = second.time - first.time;
                for (b, tau) in tau_grid.iter().enumerate() {
                    if delay >= *tau && delay < tau + bin_width {
                        observed[b] += 1;
                    }
                }
            }
        }
    }
    if let Some((b, e)) = expected.iter().enumerate().find(|(_, e)| **e < MIN_EXPECTED_PAIRS) {
        return Err(McwfError::InsufficientStatistics {
            tau: tau_grid[b],
            expected: *e,
        });
    }
    let values = observed.iter().zip(&expected).map(|(o, e)| *o as f64 / e).collect();
    let errors = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| (*o as f64).max(1.0).sqrt() / e)
        .collect();
    let mut s = CorrelationSeries::new(CorrelationKind::G2, vec![i, j], tau_grid.to_vec(), values)
        .map_err(|e| McwfError::InvalidInput(e.to_string()))?;
    s.std_errors = Some(errors);
    Ok(s)
}
