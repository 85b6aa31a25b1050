//! Per-input multiplier equations, solved by damped Newton ascent on the
//! concave dual objective.
//!
//! For a fixed reference `R` and input `a`, the multipliers `λ(s,a,b)` are
//! chosen so that the channel `ρ(s|a) = R(s)·exp(Σ_b λ(s_b,a,b))` has the
//! prescribed marginals `P(s|a,b)`. Equivalently they maximize
//! `Σ_{s,b} P(s|a,b)·λ(s,a,b) + 1 − Σ_s ρ(s|a)`. The inputs decouple and are
//! solved independently.
//!
//! The objective is invariant under per-measurement shifts `λ(·,a,b) += c_b`
//! with `Σ_b c_b = 0`; the Newton system is damped by `1e-10·T` on the
//! diagonal and each step is projected off that null space. Coordinates with
//! `P(s|a,b) = 0` are pinned to `e^λ = 0` (`λ = −∞`) and left out.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::spd_solve;
use crate::model::ProcessSpec;
use crate::scalar::Real;
use crate::sequence::{accumulate_dual_sums, total_mass, DualSums, ReferenceDistribution};

/// Lagrange multipliers `λ(s,a,b)` in nats, laid out like the process table.
/// Entries are `−∞` exactly where `P(s|a,b) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Multipliers<T> {
    num_inputs: usize,
    num_measurements: usize,
    num_outcomes: usize,
    values: Vec<T>,
}

impl<T: Real> Multipliers<T> {
    pub fn zeros(num_inputs: usize, num_measurements: usize, num_outcomes: usize) -> Self {
        Multipliers {
            num_inputs,
            num_measurements,
            num_outcomes,
            values: vec![T::zero(); num_inputs * num_measurements * num_outcomes],
        }
    }

    pub fn from_values(spec: &ProcessSpec<T>, values: Vec<T>) -> Result<Self> {
        let n = spec.as_slice().len();
        if values.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} multipliers, got {}",
                values.len()
            )));
        }
        Ok(Multipliers {
            num_inputs: spec.num_inputs(),
            num_measurements: spec.num_measurements(),
            num_outcomes: spec.num_outcomes(),
            values,
        })
    }

    /// Starting point exact for a product-form reference:
    /// `λ(s,a,b) = ln P(s|a,b) − ln R_b(s)` with `R_b` the marginals of `R`.
    pub fn cold_start(spec: &ProcessSpec<T>, reference: &ReferenceDistribution<T>) -> Self {
        let nb = spec.num_measurements();
        let ns = spec.num_outcomes();
        let marginals: Vec<Vec<T>> = (0..nb).map(|b| reference.marginal(b)).collect();
        let mut values = Vec::with_capacity(spec.as_slice().len());
        for a in 0..spec.num_inputs() {
            for b in 0..nb {
                for s in 0..ns {
                    let p = spec.prob(a, b, s);
                    values.push(if p > T::zero() {
                        p.ln() - marginals[b][s].max(T::min_positive_value()).ln()
                    } else {
                        T::neg_infinity()
                    });
                }
            }
        }
        Multipliers {
            num_inputs: spec.num_inputs(),
            num_measurements: nb,
            num_outcomes: ns,
            values,
        }
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, b: usize) -> T {
        self.values[(a * self.num_measurements + b) * self.num_outcomes + s]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn input_slice(&self, a: usize) -> &[T] {
        let w = self.num_measurements * self.num_outcomes;
        &self.values[a * w..(a + 1) * w]
    }

    /// `e^λ` for every entry (`0` where pinned).
    pub fn exp_factors(&self) -> Vec<T> {
        self.values.iter().map(|x| x.exp()).collect()
    }

    /// Adds `delta` to every finite entry.
    pub fn shift(&mut self, delta: T) {
        for v in self.values.iter_mut().filter(|v| v.is_finite()) {
            *v += delta;
        }
    }

    /// `d₁(a) = Σ_{s,b} P(s|a,b)·λ(s,a,b)`, skipping zero-probability entries.
    pub fn linear_terms(&self, spec: &ProcessSpec<T>) -> Vec<T> {
        (0..self.num_inputs)
            .map(|a| {
                spec.input_slice(a)
                    .iter()
                    .zip(self.input_slice(a))
                    .filter(|(p, _)| **p > T::zero())
                    .map(|(&p, &l)| p * l)
                    .sum()
            })
            .collect()
    }

    fn matches(&self, spec: &ProcessSpec<T>) -> bool {
        self.num_inputs == spec.num_inputs()
            && self.num_measurements == spec.num_measurements()
            && self.num_outcomes == spec.num_outcomes()
    }
}

/// The pair `(R, λ)` standing for `ρ(s|a) = R(s)·exp(Σ_b λ(s_b,a,b))`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedChannel<T> {
    pub reference: ReferenceDistribution<T>,
    pub multipliers: Multipliers<T>,
}

impl<T: Real> FactorizedChannel<T> {
    /// `ρ(s|a)` for the sequence with the given rank.
    pub fn conditional(&self, a: usize, rank: usize) -> T {
        let space = self.reference.space();
        let exponent: T = (0..space.num_measurements())
            .map(|b| self.multipliers.get(space.digit(rank, b), a, b))
            .sum();
        self.reference.as_slice()[rank] * exponent.exp()
    }

    /// Dense `ρ(s|a)`, input-major. Only sensible for small spaces.
    pub fn materialize(&self) -> Vec<T> {
        let n = self.reference.space().len();
        (0..self.multipliers.num_inputs)
            .flat_map(|a| (0..n).map(move |k| (a, k)))
            .map(|(a, k)| self.conditional(a, k))
            .collect()
    }
}

/// Per-input dual value `Σ_{s,b} P(s|a,b)·λ(s,a,b) + 1 − Σ_s R(s)·e^{Σ_b λ}`.
pub fn dual_objective<T: Real>(
    lambda_a: &[T],
    reference: &ReferenceDistribution<T>,
    p_a: &[T],
) -> Result<T> {
    if lambda_a.len() != p_a.len() {
        return Err(Error::DimensionMismatch("multiplier and process slices differ".into()));
    }
    let e: Vec<T> = lambda_a.iter().map(|x| x.exp()).collect();
    let total = total_mass(reference, &e)?;
    Ok(linear_value(lambda_a, p_a) + T::one() - total)
}

fn linear_value<T: Real>(lambda_a: &[T], p_a: &[T]) -> T {
    p_a.iter()
        .zip(lambda_a)
        .filter(|(p, _)| **p > T::zero())
        .map(|(&p, &l)| p * l)
        .sum()
}

/// Newton solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions<T> {
    /// Stop when `max |m(s,b) − P(s|a,b)|` over active coordinates is below this.
    pub tolerance: T,
    pub max_iterations: usize,
    /// Diagonal damping relative to the total mass `T`.
    pub damping: T,
    pub armijo: T,
}

impl<T: Real> Default for NewtonOptions<T> {
    fn default() -> Self {
        NewtonOptions {
            tolerance: T::tolerance(1e-12, 64.0),
            max_iterations: 100,
            damping: T::tolerance(1e-10, 16.0),
            armijo: T::lit(1e-4),
        }
    }
}

impl<T: Real> NewtonOptions<T> {
    pub fn with_tolerance(tolerance: T) -> Self {
        NewtonOptions { tolerance, ..Self::default() }
    }
}

/// Work done by one [`solve_multipliers`] call.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NewtonStats<T> {
    /// Newton steps summed over inputs.
    pub total_steps: usize,
    /// Largest step count of any input.
    pub max_steps: usize,
    /// Largest final marginal residual over inputs.
    pub worst_residual: T,
}

/// Solves the marginal equations for every input with the default options.
pub fn solve_multipliers<T: Real>(
    reference: &ReferenceDistribution<T>,
    spec: &ProcessSpec<T>,
    warm_start: Option<&Multipliers<T>>,
    tolerance: T,
) -> Result<(Multipliers<T>, NewtonStats<T>)> {
    solve_multipliers_with(reference, spec, warm_start, &NewtonOptions::with_tolerance(tolerance))
}

pub fn solve_multipliers_with<T: Real>(
    reference: &ReferenceDistribution<T>,
    spec: &ProcessSpec<T>,
    warm_start: Option<&Multipliers<T>>,
    options: &NewtonOptions<T>,
) -> Result<(Multipliers<T>, NewtonStats<T>)> {
    let space = reference.space();
    if space.num_measurements() != spec.num_measurements() || space.num_outcomes() != spec.num_outcomes() {
        return Err(Error::DimensionMismatch("reference does not match the process".into()));
    }
    let cold;
    let start = match warm_start {
        Some(w) if w.matches(spec) => w,
        Some(_) => return Err(Error::DimensionMismatch("warm start does not match the process".into())),
        None => {
            cold = Multipliers::cold_start(spec, reference);
            &cold
        }
    };

    let results: Vec<(Vec<T>, usize, T)> = (0..spec.num_inputs())
        .into_par_iter()
        .map(|a| solve_input(a, reference, spec.input_slice(a), start.input_slice(a), options))
        .collect::<Result<_>>()?;

    let mut stats = NewtonStats { total_steps: 0, max_steps: 0, worst_residual: T::zero() };
    let mut values = Vec::with_capacity(spec.as_slice().len());
    for (lambda, steps, residual) in results {
        stats.total_steps += steps;
        stats.max_steps = stats.max_steps.max(steps);
        stats.worst_residual = stats.worst_residual.max(residual);
        values.extend(lambda);
    }
    Ok((Multipliers::from_values(spec, values)?, stats))
}

fn residual<T: Real>(sums: &DualSums<T>, p_a: &[T]) -> T {
    p_a.iter()
        .zip(&sums.marginals)
        .filter(|(p, _)| **p > T::zero())
        .map(|(&p, &m)| (p - m).abs())
        .fold(T::zero(), T::max)
}

/// Removes the component of `step` along the gauge directions (constant per
/// measurement block over active coordinates, block constants summing to 0).
fn project_off_gauge<T: Real>(step: &mut [T], blocks: &[Vec<usize>]) {
    let means: Vec<T> = blocks
        .iter()
        .map(|idx| idx.iter().map(|&i| step[i]).sum::<T>() / T::from_usize_lossy(idx.len()))
        .collect();
    let inv_sizes: T = blocks.iter().map(|idx| T::one() / T::from_usize_lossy(idx.len())).sum();
    let kappa = -means.iter().copied().sum::<T>() / inv_sizes;
    for (idx, &mean) in blocks.iter().zip(&means) {
        let c = mean + kappa / T::from_usize_lossy(idx.len());
        for &i in idx {
            step[i] -= c;
        }
    }
}

fn solve_input<T: Real>(
    a: usize,
    reference: &ReferenceDistribution<T>,
    p_a: &[T],
    start: &[T],
    options: &NewtonOptions<T>,
) -> Result<(Vec<T>, usize, T)> {
    let ns = reference.space().num_outcomes();
    let d = p_a.len();
    // active coordinates, positions into the active vector, grouped by block
    let active: Vec<usize> = (0..d).filter(|&c| p_a[c] > T::zero()).collect();
    let n = active.len();
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); d / ns];
    for (i, &c) in active.iter().enumerate() {
        blocks[c / ns].push(i);
    }
    blocks.retain(|blk| !blk.is_empty());

    let mut lambda: Vec<T> = (0..d)
        .map(|c| {
            if p_a[c] > T::zero() {
                if start[c].is_finite() {
                    start[c]
                } else {
                    p_a[c].ln()
                }
            } else {
                T::neg_infinity()
            }
        })
        .collect();
    let exp_of = |l: &[T]| l.iter().map(|x| x.exp()).collect::<Vec<T>>();
    let objective = |l: &[T], sums: &DualSums<T>| linear_value(l, p_a) + T::one() - sums.total;

    let mut sums = accumulate_dual_sums(reference, &exp_of(&lambda))?;
    let mut hessian = vec![T::zero(); n * n];
    let mut step = vec![T::zero(); n];
    let tiny_gain = T::epsilon() * T::lit(1e3);

    for iteration in 0..=options.max_iterations {
        let res = residual(&sums, p_a);
        if res <= options.tolerance {
            return Ok((lambda, iteration, res));
        }
        if iteration == options.max_iterations {
            return Err(Error::NewtonNotConverged {
                input: a,
                iterations: iteration,
                residual: res.to_f64_lossy(),
            });
        }

        for (i, &ci) in active.iter().enumerate() {
            step[i] = p_a[ci] - sums.marginals[ci];
        }
        let gradient = step.clone();

        let mut damping = options.damping * sums.total;
        let mut solved = false;
        for _ in 0..6 {
            for (i, &ci) in active.iter().enumerate() {
                for (j, &cj) in active.iter().enumerate() {
                    hessian[i * n + j] = sums.pairs[ci * d + cj];
                }
                hessian[i * n + i] += damping;
            }
            step.copy_from_slice(&gradient);
            if spd_solve(&hessian, n, &mut step) {
                solved = true;
                break;
            }
            damping *= T::lit(100.0);
        }
        if !solved {
            return Err(Error::IllConditioned { input: a, damping: damping.to_f64_lossy() });
        }
        project_off_gauge(&mut step, &blocks);

        let slope: T = step.iter().zip(&gradient).map(|(&x, &g)| x * g).sum();
        let base = objective(&lambda, &sums);
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = lambda.clone();
            for (i, &ci) in active.iter().enumerate() {
                trial[ci] += t * step[i];
            }
            if let Ok(trial_sums) = accumulate_dual_sums(reference, &exp_of(&trial)) {
                let value = objective(&trial, &trial_sums);
                let armijo = value >= base + options.armijo * t * slope;
                // below float resolution of the objective, fall back to the residual
                let resolved = slope * t > tiny_gain * (T::one() + base.abs());
                if armijo && (resolved || residual(&trial_sums, p_a) < res) {
                    accepted = Some((trial, trial_sums));
                    break;
                }
                if !resolved && residual(&trial_sums, p_a) < res {
                    accepted = Some((trial, trial_sums));
                    break;
                }
            }
            t *= T::lit(0.5);
        }
        match accepted {
            Some((l, s)) => {
                lambda = l;
                sums = s;
            }
            None => {
                return Err(Error::NewtonNotConverged {
                    input: a,
                    iterations: iteration + 1,
                    residual: res.to_f64_lossy(),
                })
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::planar_problem;
    use crate::sequence::SequenceSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spec(rng: &mut ChaCha8Rng, na: usize, nb: usize, ns: usize) -> ProcessSpec<f64> {
        let mut prob = Vec::new();
        for _ in 0..na * nb {
            let row: Vec<f64> = (0..ns).map(|_| rng.gen_range(0.05..1.0)).collect();
            let z: f64 = row.iter().sum();
            prob.extend(row.into_iter().map(|x| x / z));
        }
        ProcessSpec::new(na, nb, ns, prob).unwrap()
    }

    fn random_reference(rng: &mut ChaCha8Rng, nb: usize, ns: usize) -> ReferenceDistribution<f64> {
        let space = SequenceSpace::new(nb, ns).unwrap();
        let w = (0..space.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
        ReferenceDistribution::from_weights(space, w).unwrap()
    }

    /// Marginals of the implied channel by explicit enumeration.
    fn nested_marginal_residual(
        r: &ReferenceDistribution<f64>,
        lambda: &Multipliers<f64>,
        spec: &ProcessSpec<f64>,
    ) -> f64 {
        let space = r.space();
        let mut worst: f64 = 0.0;
        for a in 0..spec.num_inputs() {
            for b in 0..spec.num_measurements() {
                for s in 0..spec.num_outcomes() {
                    let mut m = 0.0;
                    for k in 0..space.len() {
                        let seq = space.unrank(k);
                        if seq[b] != s {
                            continue;
                        }
                        let e: f64 = (0..seq.len()).map(|bb| lambda.get(seq[bb], a, bb)).sum();
                        m += r.as_slice()[k] * e.exp();
                    }
                    worst = worst.max((m - spec.prob(a, b, s)).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn zero_multipliers_give_zero_objective() {
        let space = SequenceSpace::new(3, 2).unwrap();
        let r = ReferenceDistribution::<f64>::uniform(space);
        let p = planar_problem::<f64>(4, 3).unwrap();
        let v = dual_objective(&[0.0; 6], &r, p.input_slice(0)).unwrap();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn single_measurement_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = random_spec(&mut rng, 3, 1, 4);
        let r = random_reference(&mut rng, 1, 4);
        let (lambda, _) = solve_multipliers(&r, &spec, None, 1e-13).unwrap();
        for a in 0..3 {
            for s in 0..4 {
                let expected = (spec.prob(a, 0, s) / r.as_slice()[s]).ln();
                assert!((lambda.get(s, a, 0) - expected).abs() < 1e-12);
            }
            // the dual value is then a relative entropy
            let value = dual_objective(lambda.input_slice(a), &r, spec.input_slice(a)).unwrap();
            let kl: f64 = (0..4)
                .map(|s| spec.prob(a, 0, s) * (spec.prob(a, 0, s) / r.as_slice()[s]).ln())
                .sum();
            assert!((value - kl).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_instance_gives_constant_multipliers() {
        let spec = ProcessSpec::new(2, 3, 2, vec![0.5f64; 12]).unwrap();
        let r = ReferenceDistribution::uniform(SequenceSpace::new(3, 2).unwrap());
        let (lambda, _) = solve_multipliers(&r, &spec, None, 1e-12).unwrap();
        for a in 0..2 {
            for b in 0..3 {
                assert!((lambda.get(0, a, b) - lambda.get(1, a, b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_instances_meet_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (na, nb, ns) in [(2, 3, 2), (3, 4, 2), (2, 3, 3), (2, 2, 2)] {
            let spec = random_spec(&mut rng, na, nb, ns);
            let r = random_reference(&mut rng, nb, ns);
            let (lambda, stats) = solve_multipliers(&r, &spec, None, 1e-11).unwrap();
            assert!(stats.worst_residual <= 1e-11);
            let nested = nested_marginal_residual(&r, &lambda, &spec);
            assert!(nested <= 1e-10, "nested residual {nested}");
            let zero = dual_objective(&vec![0.0; nb * ns], &r, spec.input_slice(0)).unwrap();
            let opt = dual_objective(lambda.input_slice(0), &r, spec.input_slice(0)).unwrap();
            assert!(opt >= zero);
        }
    }

    #[test]
    fn pinned_zeros_stay_pinned() {
        let spec = planar_problem::<f64>(8, 4).unwrap();
        let r = ReferenceDistribution::<f64>::uniform(SequenceSpace::new(4, 2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = r.as_slice().iter().map(|x| x * rng.gen_range(0.5..1.5)).collect();
        let r = ReferenceDistribution::from_weights(r.space().clone(), w).unwrap();
        let (lambda, _) = solve_multipliers(&r, &spec, None, 1e-12).unwrap();
        for (p, l) in spec.as_slice().iter().zip(lambda.as_slice()) {
            assert_eq!(*p == 0.0, *l == f64::NEG_INFINITY);
        }
        assert!(nested_marginal_residual(&r, &lambda, &spec) <= 1e-10);
    }

    #[test]
    fn gauge_shift_leaves_channel_and_objective_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = random_spec(&mut rng, 2, 3, 2);
        let r = random_reference(&mut rng, 3, 2);
        let (lambda, _) = solve_multipliers(&r, &spec, None, 1e-12).unwrap();
        let shifts = [0.3, -0.5, 0.2];
        let mut values = lambda.as_slice().to_vec();
        for a in 0..2 {
            for (b, c) in shifts.iter().enumerate() {
                for s in 0..2 {
                    values[(a * 3 + b) * 2 + s] += c;
                }
            }
        }
        let shifted = Multipliers::from_values(&spec, values).unwrap();
        let ch1 = FactorizedChannel { reference: r.clone(), multipliers: lambda.clone() };
        let ch2 = FactorizedChannel { reference: r.clone(), multipliers: shifted.clone() };
        for (x, y) in ch1.materialize().iter().zip(ch2.materialize()) {
            assert!((x - y).abs() < 1e-14);
        }
        for a in 0..2 {
            let v1 = dual_objective(lambda.input_slice(a), &r, spec.input_slice(a)).unwrap();
            let v2 = dual_objective(shifted.input_slice(a), &r, spec.input_slice(a)).unwrap();
            assert!((v1 - v2).abs() < 1e-13);
        }
    }

    #[test]
    fn dual_objective_is_midpoint_concave() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = random_spec(&mut rng, 1, 3, 2);
        let r = random_reference(&mut rng, 3, 2);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let fx = dual_objective(&x, &r, spec.input_slice(0)).unwrap();
            let fy = dual_objective(&y, &r, spec.input_slice(0)).unwrap();
            let fm = dual_objective(&mid, &r, spec.input_slice(0)).unwrap();
            assert!(fm >= 0.5 * (fx + fy) - 1e-9);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = random_spec(&mut rng, 1, 4, 2);
        let r = random_reference(&mut rng, 4, 2);
        let options = NewtonOptions { max_iterations: 0, ..NewtonOptions::with_tolerance(1e-12) };
        assert!(matches!(
            solve_multipliers_with(&r, &spec, None, &options),
            Err(Error::NewtonNotConverged { input: 0, .. })
        ));
    }
}
