//! Outer alternating minimization: dual solve, prior update, `F` sweep,
//! certificate, then `R ← R·F^α`.
//!
//! Every round produces a certificate `C₋ ≤ C₊` in bits. `C₋` is the value
//! of a feasible dual point and lower-bounds the communication cost; `C₊` is
//! the mutual information of the current feasible channel. The run stops
//! when the gap drops below `ξ`.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::capacity::{maximize_exact, maximize_quadratic, quadratic_coefficients, InputPrior};
use crate::dual::{solve_multipliers, FactorizedChannel, Multipliers, NewtonStats};
use crate::error::{Error, Result};
use crate::model::{validate_process, ProcessSpec};
use crate::scalar::{nats_to_bits, Real};
use crate::sequence::{
    accumulate_dual_sums, f_table, ReferenceDistribution, SequenceSpace, DEFAULT_MEMORY_BUDGET,
};

/// Rounds over which the gap must shrink by at least [`STAGNATION_THRESHOLD`].
pub const STAGNATION_WINDOW: usize = 20;
/// Gap improvement (bits) below which a run counts as stalled.
pub const STAGNATION_THRESHOLD: f64 = 1e-14;

/// How the input distribution is chosen each round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode<T> {
    /// Maximize the mutual information over `ρ(a)` every round.
    Optimize,
    /// Keep `ρ(a)` fixed.
    Fixed(InputPrior<T>),
}

/// How the prior is updated in [`PriorMode::Optimize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    /// Maximize the second-order model of the mutual information.
    Quadratic,
    /// Blahut–Arimoto on the implicit channel; one sweep per inner step.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig<T> {
    /// Stop once `C₊ − C₋` is at most this many bits.
    pub accuracy_bits: T,
    pub max_iterations: usize,
    /// Marginal residual accepted from each dual solve.
    pub newton_tolerance: T,
    pub prior: PriorMode<T>,
    pub capacity: CapacityMode,
    /// Exponent in `R ← R·F^α`; must be at least 1.
    pub alpha: T,
    /// Overrides the default cap on the number of sequences.
    pub memory_budget: Option<u64>,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        SolverConfig {
            accuracy_bits: T::tolerance(1e-6, 64.0),
            max_iterations: 10_000,
            newton_tolerance: T::tolerance(1e-12, 64.0),
            prior: PriorMode::Optimize,
            capacity: CapacityMode::Quadratic,
            alpha: T::one(),
            memory_budget: None,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn with_accuracy(accuracy_bits: T) -> Self {
        SolverConfig { accuracy_bits, ..Self::default() }
    }

    /// Fixed uniform prior, the natural choice for symmetric processes.
    pub fn uniform_prior(mut self, num_inputs: usize) -> Self {
        self.prior = PriorMode::Fixed(InputPrior::uniform(num_inputs));
        self
    }

    pub fn validate(&self, spec: &ProcessSpec<T>) -> Result<()> {
        if !(self.accuracy_bits > T::zero()) {
            return Err(Error::InvalidArgument(format!("accuracy must be > 0, got {}", self.accuracy_bits)));
        }
        if !(self.alpha >= T::one()) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        if !(self.newton_tolerance > T::zero()) {
            return Err(Error::InvalidArgument("newton tolerance must be > 0".into()));
        }
        if let PriorMode::Fixed(p) = &self.prior {
            if p.len() != spec.num_inputs() {
                return Err(Error::DimensionMismatch(format!(
                    "fixed prior has {} entries, process has {} inputs",
                    p.len(),
                    spec.num_inputs()
                )));
            }
        }
        Ok(())
    }

    fn space_for(&self, spec: &ProcessSpec<T>) -> Result<SequenceSpace> {
        SequenceSpace::with_budget(
            spec.num_measurements(),
            spec.num_outcomes(),
            self.memory_budget.unwrap_or(DEFAULT_MEMORY_BUDGET),
        )
    }
}

/// Bounds on the communication cost after one round, in bits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate<T> {
    pub iteration: usize,
    pub lower_bits: T,
    pub upper_bits: T,
    pub gap_bits: T,
    /// Wall-clock time since the start of the run.
    #[serde(default)]
    pub elapsed_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    IterationCap,
    /// The gap stopped improving at floating-point resolution.
    Stagnated,
    NumericalFailure,
}

/// Accumulated wall-clock time per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub dual_seconds: f64,
    pub capacity_seconds: f64,
    pub sweep_seconds: f64,
}

impl PhaseTimings {
    fn add(&mut self, dual: Duration, capacity: Duration, sweep: Duration) {
        self.dual_seconds += dual.as_secs_f64();
        self.capacity_seconds += capacity.as_secs_f64();
        self.sweep_seconds += sweep.as_secs_f64();
    }
}

/// Residuals of the optimality conditions at a solver state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport<T> {
    /// `max_s F(s) − 1`; dual feasibility needs this `≤ 0`.
    pub f_excess: T,
    /// `max_s ρ(s)·|ln F(s)|`.
    pub slackness: T,
    /// Largest marginal-constraint violation of the channel.
    pub marginal_residual: T,
    /// `max_a d₁(a) − Σ_ā ρ(ā)d₁(ā)`.
    pub prior_residual: T,
}

impl<T: Real> OptimalityReport<T> {
    pub fn max_residual(&self) -> T {
        self.f_excess
            .max(self.slackness)
            .max(self.marginal_residual)
            .max(self.prior_residual)
    }
}

/// Solver state after a completed round.
#[derive(Clone, Debug)]
pub struct SolverState<T> {
    /// `R` and the multipliers solved against it.
    pub channel: FactorizedChannel<T>,
    pub prior: InputPrior<T>,
    /// `F(s)` for `channel` and `prior`.
    pub f: Vec<T>,
    /// `R·F^α`, normalized; the reference for the next round.
    pub next_reference: ReferenceDistribution<T>,
    /// Uniform per-entry multiplier shift compensating the normalization of
    /// `next_reference`; applied to the warm start.
    pub warm_shift: T,
    pub iteration: usize,
    pub newton: NewtonStats<T>,
}

impl<T: Real> SolverState<T> {
    /// First round from the uniform reference and a cold-started dual solve.
    pub fn initial(spec: &ProcessSpec<T>, config: &SolverConfig<T>) -> Result<Self> {
        config.validate(spec)?;
        let reference = ReferenceDistribution::uniform(config.space_for(spec)?);
        let prior = match &config.prior {
            PriorMode::Fixed(p) => p.clone(),
            PriorMode::Optimize => InputPrior::uniform(spec.num_inputs()),
        };
        Ok(round(reference, None, prior, 0, spec, config)?.0)
    }

    /// Round from an arbitrary full-support reference, cold-started.
    pub fn from_reference(
        reference: ReferenceDistribution<T>,
        prior: InputPrior<T>,
        spec: &ProcessSpec<T>,
        config: &SolverConfig<T>,
    ) -> Result<Self> {
        config.validate(spec)?;
        Ok(round(reference, None, prior, 0, spec, config)?.0)
    }
}

/// One round starting from `state.next_reference`, warm-started from the
/// previous multipliers.
pub fn iterate<T: Real>(state: &SolverState<T>, spec: &ProcessSpec<T>, config: &SolverConfig<T>) -> Result<SolverState<T>> {
    Ok(iterate_timed(state, spec, config)?.0)
}

fn iterate_timed<T: Real>(
    state: &SolverState<T>,
    spec: &ProcessSpec<T>,
    config: &SolverConfig<T>,
) -> Result<(SolverState<T>, [Duration; 3])> {
    let mut warm = state.channel.multipliers.clone();
    warm.shift(state.warm_shift);
    round(
        state.next_reference.clone(),
        Some(&warm),
        state.prior.clone(),
        state.iteration + 1,
        spec,
        config,
    )
}

fn round<T: Real>(
    reference: ReferenceDistribution<T>,
    warm: Option<&Multipliers<T>>,
    previous_prior: InputPrior<T>,
    iteration: usize,
    spec: &ProcessSpec<T>,
    config: &SolverConfig<T>,
) -> Result<(SolverState<T>, [Duration; 3])> {
    let t0 = Instant::now();
    let (multipliers, newton) = solve_multipliers(&reference, spec, warm, config.newton_tolerance)?;
    let t1 = Instant::now();

    let prior = match (&config.prior, config.capacity) {
        (PriorMode::Fixed(p), _) => p.clone(),
        (PriorMode::Optimize, CapacityMode::Quadratic) => {
            maximize_quadratic(&quadratic_coefficients(&multipliers, &reference, spec)?)?
        }
        (PriorMode::Optimize, CapacityMode::Exact) => maximize_exact(
            &multipliers,
            &reference,
            spec,
            &previous_prior,
            T::tolerance(1e-12, 64.0),
            100_000,
        )?,
    };
    let t2 = Instant::now();

    let space = reference.space().clone();
    let f = f_table(&space, &multipliers.exp_factors(), prior.as_slice())?;
    let mut next_reference = reference.clone();
    let mass = next_reference.rescale(&f, config.alpha)?;
    let warm_shift = mass.ln() / T::from_usize_lossy(spec.num_measurements());
    let t3 = Instant::now();

    let state = SolverState {
        channel: FactorizedChannel { reference, multipliers },
        prior,
        f,
        next_reference,
        warm_shift,
        iteration,
        newton,
    };
    Ok((state, [t1 - t0, t2 - t1, t3 - t2]))
}

/// `C₋ = Σ P·ρ·λ − ln max_s F` and `C₊ = Σ P·ρ·λ − Σ_s ρ(s) ln F(s)` with
/// `ρ(s) ∝ R(s)F(s)`, converted to bits.
pub fn bounds<T: Real>(state: &SolverState<T>, spec: &ProcessSpec<T>) -> Certificate<T> {
    let (lower, upper) = bounds_nats(state, spec);
    let lower_bits = nats_to_bits(lower);
    let upper_bits = nats_to_bits(upper);
    Certificate {
        iteration: state.iteration,
        lower_bits,
        upper_bits,
        gap_bits: upper_bits - lower_bits,
        elapsed_seconds: 0.0,
    }
}

fn bounds_nats<T: Real>(state: &SolverState<T>, spec: &ProcessSpec<T>) -> (T, T) {
    let linear: T = state
        .channel
        .multipliers
        .linear_terms(spec)
        .iter()
        .zip(state.prior.as_slice())
        .filter(|(_, &p)| p > T::zero())
        .map(|(&d, &p)| d * p)
        .sum();
    let reference = &state.channel.reference;
    let space = reference.space();
    let r = reference.as_slice();
    let f = &state.f;
    let (max_f, mass, weighted_log) = space.reduce(
        |c| {
            let mut max_f = T::zero();
            let mut mass = T::zero();
            let mut weighted = T::zero();
            for k in space.chunk_ranks(c) {
                let x = f[k];
                max_f = max_f.max(x);
                let w = r[k] * x;
                if w > T::zero() {
                    mass += w;
                    weighted += w * x.ln();
                }
            }
            (max_f, mass, weighted)
        },
        |a, b| (a.0.max(b.0), a.1 + b.1, a.2 + b.2),
    );
    let lower = linear - max_f.ln();
    // normalizing the weights keeps the average of ln F at or below ln max F
    let upper = (linear - weighted_log / mass).max(lower);
    (lower, upper)
}

/// Residuals of the optimality conditions at `state`.
pub fn optimality_check<T: Real>(state: &SolverState<T>, spec: &ProcessSpec<T>) -> Result<OptimalityReport<T>> {
    let reference = &state.channel.reference;
    let space = reference.space();
    let r = reference.as_slice();
    let f = &state.f;
    let (max_f, slackness) = space.reduce(
        |c| {
            let mut max_f = T::zero();
            let mut slack = T::zero();
            for k in space.chunk_ranks(c) {
                max_f = max_f.max(f[k]);
                if f[k] > T::zero() {
                    slack = slack.max(r[k] * f[k] * f[k].ln().abs());
                }
            }
            (max_f, slack)
        },
        |a, b| (a.0.max(b.0), a.1.max(b.1)),
    );

    let multipliers = &state.channel.multipliers;
    let mut marginal_residual = T::zero();
    for a in 0..spec.num_inputs() {
        let e: Vec<T> = multipliers.input_slice(a).iter().map(|x| x.exp()).collect();
        let sums = accumulate_dual_sums(reference, &e)?;
        for (&p, &m) in spec.input_slice(a).iter().zip(&sums.marginals) {
            marginal_residual = marginal_residual.max((p - m).abs());
        }
    }

    let d1 = multipliers.linear_terms(spec);
    let average: T = d1.iter().zip(state.prior.as_slice()).map(|(&d, &p)| d * p).sum();
    let prior_residual = d1.iter().map(|&d| d - average).fold(T::neg_infinity(), T::max);

    Ok(OptimalityReport { f_excess: max_f - T::one(), slackness, marginal_residual, prior_residual })
}

/// Outcome of [`solve`].
#[derive(Clone, Debug)]
pub struct SolveResult<T> {
    /// `C₊` of the final round, in bits.
    pub value_bits: T,
    pub history: Vec<Certificate<T>>,
    pub prior: InputPrior<T>,
    pub channel: FactorizedChannel<T>,
    /// Completed rounds.
    pub iterations: usize,
    pub timings: PhaseTimings,
    pub termination: Termination,
    pub residuals: Option<OptimalityReport<T>>,
    /// Number of outcome sequences swept per round.
    pub sequence_space_size: usize,
    /// The error that ended the run early, if any.
    pub failure: Option<Error>,
}

impl<T: Real> SolveResult<T> {
    pub fn certificate(&self) -> &Certificate<T> {
        self.history.last().expect("a solve records at least one round")
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Runs rounds until the gap is within `ξ`, the gap stalls, or the
/// iteration cap is hit. Fails outright only if the first round fails; later
/// failures end the run with [`Termination::NumericalFailure`].
pub fn solve<T: Real>(spec: &ProcessSpec<T>, config: &SolverConfig<T>) -> Result<SolveResult<T>> {
    validate_process(spec).into_result()?;
    config.validate(spec)?;
    let start = Instant::now();
    let mut timings = PhaseTimings::default();

    let reference = ReferenceDistribution::uniform(config.space_for(spec)?);
    let prior = match &config.prior {
        PriorMode::Fixed(p) => p.clone(),
        PriorMode::Optimize => InputPrior::uniform(spec.num_inputs()),
    };
    let (mut state, phases) = round(reference, None, prior, 0, spec, config)?;
    timings.add(phases[0], phases[1], phases[2]);

    let mut history = Vec::new();
    let mut failure = None;
    let termination = loop {
        let mut cert = bounds(&state, spec);
        cert.elapsed_seconds = start.elapsed().as_secs_f64();
        let gap = cert.gap_bits;
        history.push(cert);
        if gap <= config.accuracy_bits {
            break Termination::Converged;
        }
        if stagnated(&history) {
            break Termination::Stagnated;
        }
        if history.len() >= config.max_iterations {
            break Termination::IterationCap;
        }
        // F is rebuilt by the next round; dropping it early caps peak memory
        state.f = Vec::new();
        match iterate_timed(&state, spec, config) {
            Ok((next, phases)) => {
                timings.add(phases[0], phases[1], phases[2]);
                state = next;
            }
            Err(e) => {
                failure = Some(e);
                break Termination::NumericalFailure;
            }
        }
    };

    let residuals = if failure.is_none() { optimality_check(&state, spec).ok() } else { None };
    let sequence_space_size = state.channel.reference.space().len();
    Ok(SolveResult {
        value_bits: history.last().map(|c| c.upper_bits).unwrap_or_else(T::nan),
        iterations: history.len(),
        history,
        prior: state.prior,
        channel: state.channel,
        timings,
        termination,
        residuals,
        sequence_space_size,
        failure,
    })
}

/// Neither the best gap nor `C₊` moved by [`STAGNATION_THRESHOLD`] over the
/// last [`STAGNATION_WINDOW`] rounds.
fn stagnated<T: Real>(history: &[Certificate<T>]) -> bool {
    let n = history.len();
    if n <= STAGNATION_WINDOW {
        return false;
    }
    let threshold = T::lit(STAGNATION_THRESHOLD);
    let (earlier, window) = history.split_at(n - STAGNATION_WINDOW);
    let best = |c: &[Certificate<T>]| c.iter().map(|c| c.gap_bits).fold(T::infinity(), T::min);
    let lowest = |c: &[Certificate<T>]| c.iter().map(|c| c.upper_bits).fold(T::infinity(), T::min);
    best(earlier) - best(window) < threshold && lowest(earlier) - lowest(window) < threshold
}
