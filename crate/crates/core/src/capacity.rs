//! Prior updates: maximizing the mutual information of the current channel
//! over the input distribution `ρ(a)`.
//!
//! The default update maximizes the quadratic model
//! `Σ_a d₁(a)ρ(a) + 1 − Σ_{a,a'} d₂(a,a')ρ(a)ρ(a')` over the simplex, with
//! `d₁(a) = Σ_{s,b} P(s|a,b)λ(s,a,b)` and
//! `d₂(a,a') = Σ_s R(s)·e^{Σ_b λ(s_b,a,b) + Σ_b λ(s_b,a',b)}`.
//! The exact update runs Blahut–Arimoto on the implicit channel and costs a
//! full sweep per inner iteration.
//!
//! Everything is computed in nats; only the public `*_bits` values convert.

use serde::{Deserialize, Serialize};

use crate::dual::Multipliers;
use crate::error::{Error, Result};
use crate::model::ProcessSpec;
use crate::scalar::{bits_to_nats, nats_to_bits, Real};
use crate::sequence::{FactorTables, ReferenceDistribution};

/// Distribution `ρ(a)` over the inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputPrior<T>(Vec<T>);

impl<T: Real> InputPrior<T> {
    pub fn uniform(n: usize) -> Self {
        InputPrior(vec![T::one() / T::from_usize_lossy(n); n])
    }

    /// Accepts non-negative weights summing to one within `1e-12`.
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("prior needs at least one input".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::InvalidArgument("prior weights must be finite and >= 0".into()));
        }
        let total: T = weights.iter().copied().sum();
        let tol = T::tolerance(1e-12, 4.0 * weights.len() as f64);
        if (total - T::one()).abs() > tol {
            return Err(Error::InvalidArgument(format!("prior sums to {total}, expected 1")));
        }
        Ok(InputPrior(weights))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex<T: Real>(v: &[T]) -> Vec<T> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumulative = T::zero();
    let mut theta = T::zero();
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - T::one()) / T::from_usize_lossy(k + 1);
        if u - candidate > T::zero() {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(T::zero())).collect()
}

/// Linear and quadratic coefficients of the second-order mutual-information model.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticModel<T> {
    /// `d₁(a)`, nats.
    pub linear: Vec<T>,
    /// Row-major symmetric `d₂(a,a')`.
    pub gram: Vec<T>,
}

impl<T: Real> QuadraticModel<T> {
    pub fn new(linear: Vec<T>, gram: Vec<T>) -> Result<Self> {
        let n = linear.len();
        if gram.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "quadratic term must be {n}x{n}, got {} entries",
                gram.len()
            )));
        }
        Ok(QuadraticModel { linear, gram })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Model value in nats.
    pub fn value(&self, prior: &[T]) -> T {
        let n = self.dim();
        let mut quad = T::zero();
        for a in 0..n {
            let row: T = (0..n).map(|b| self.gram[a * n + b] * prior[b]).sum();
            quad += prior[a] * row;
        }
        let lin: T = self.linear.iter().zip(prior).map(|(&d, &p)| d * p).sum();
        lin + T::one() - quad
    }

    /// `d₁ − 2·d₂ρ`.
    pub fn gradient(&self, prior: &[T]) -> Vec<T> {
        let n = self.dim();
        (0..n)
            .map(|a| {
                let row: T = (0..n).map(|b| self.gram[a * n + b] * prior[b]).sum();
                self.linear[a] - T::lit(2.0) * row
            })
            .collect()
    }

    /// `‖ρ − Π(ρ + ∇)‖_∞`; zero exactly at a KKT point of the simplex problem.
    pub fn kkt_residual(&self, prior: &[T]) -> T {
        let g = self.gradient(prior);
        let moved: Vec<T> = prior.iter().zip(&g).map(|(&p, &d)| p + d).collect();
        project_to_simplex(&moved)
            .iter()
            .zip(prior)
            .map(|(&x, &p)| (x - p).abs())
            .fold(T::zero(), T::max)
    }
}

/// Computes `d₁` and `d₂` from a completed dual solve; `d₂` in one sweep.
pub fn quadratic_coefficients<T: Real>(
    multipliers: &Multipliers<T>,
    reference: &ReferenceDistribution<T>,
    spec: &ProcessSpec<T>,
) -> Result<QuadraticModel<T>> {
    let space = reference.space();
    let na = spec.num_inputs();
    let linear = multipliers.linear_terms(spec);
    let factors = multipliers.exp_factors();
    let tables = FactorTables::new(space, &factors, na);
    let low_len = space.low_len();
    let r = reference.as_slice();

    let upper = space.reduce(
        |c| {
            let mut acc = vec![T::zero(); na * na];
            let mut w = vec![T::zero(); na];
            for hi in space.chunk(c) {
                let hrow = &tables.high[hi * na..(hi + 1) * na];
                for lo in 0..low_len {
                    let weight = r[hi * low_len + lo];
                    if weight == T::zero() {
                        continue;
                    }
                    let lrow = &tables.low[lo * na..(lo + 1) * na];
                    for a in 0..na {
                        w[a] = lrow[a] * hrow[a];
                    }
                    for a in 0..na {
                        let u = weight * w[a];
                        if u == T::zero() {
                            continue;
                        }
                        let row = &mut acc[a * na..(a + 1) * na];
                        for b in a..na {
                            row[b] += u * w[b];
                        }
                    }
                }
            }
            acc
        },
        |mut x, y| {
            for (p, q) in x.iter_mut().zip(&y) {
                *p += *q;
            }
            x
        },
    );
    let mut gram = upper;
    for a in 0..na {
        for b in 0..a {
            gram[a * na + b] = gram[b * na + a];
        }
    }
    if gram.iter().any(|x| !x.is_finite()) {
        return Err(Error::Overflow("quadratic coefficient is not finite".into()));
    }
    QuadraticModel::new(linear, gram)
}

/// Settings for [`maximize_quadratic_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticOptions<T> {
    pub kkt_tolerance: T,
    pub max_iterations: usize,
}

impl<T: Real> Default for QuadraticOptions<T> {
    fn default() -> Self {
        QuadraticOptions { kkt_tolerance: T::tolerance(1e-10, 256.0), max_iterations: 200_000 }
    }
}

/// Maximizes the concave quadratic model over the simplex, starting from
/// the uniform distribution.
pub fn maximize_quadratic<T: Real>(model: &QuadraticModel<T>) -> Result<InputPrior<T>> {
    maximize_quadratic_with(model, &QuadraticOptions::default(), None)
}

/// Projected gradient ascent with Barzilai–Borwein steps; a step without
/// sufficient increase is redone with the fixed step `1/(2·‖d₂‖)`.
pub fn maximize_quadratic_with<T: Real>(
    model: &QuadraticModel<T>,
    options: &QuadraticOptions<T>,
    start: Option<&[T]>,
) -> Result<InputPrior<T>> {
    let n = model.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("empty quadratic model".into()));
    }
    // Gershgorin bound on the largest eigenvalue of d₂
    let spectral = (0..n)
        .map(|a| (0..n).map(|b| model.gram[a * n + b].abs()).sum::<T>())
        .fold(T::zero(), T::max)
        .max(T::min_positive_value());
    let fixed_step = T::one() / (T::lit(2.0) * spectral);
    let max_step = T::lit(1e6) * fixed_step;

    let mut prior = match start {
        Some(p) => project_to_simplex(p),
        None => vec![T::one() / T::from_usize_lossy(n); n],
    };
    let mut grad = model.gradient(&prior);
    let mut value = model.value(&prior);
    let mut step = fixed_step;
    let mut residual = model.kkt_residual(&prior);

    for _ in 0..options.max_iterations {
        if residual <= options.kkt_tolerance {
            return InputPrior::new(prior);
        }
        // the projection ignores constant shifts; centering keeps long steps exact
        let mean = grad.iter().copied().sum::<T>() / T::from_usize_lossy(n);
        let advance = |step: T| {
            let moved: Vec<T> = prior.iter().zip(&grad).map(|(&p, &g)| p + step * (g - mean)).collect();
            project_to_simplex(&moved)
        };
        let mut next = advance(step);
        let mut next_value = model.value(&next);
        let predicted: T = next.iter().zip(&prior).zip(&grad).map(|((&x, &p), &g)| g * (x - p)).sum();
        if !(next_value >= value + T::lit(1e-4) * predicted) {
            next = advance(fixed_step);
            next_value = model.value(&next);
        }
        let next_grad = model.gradient(&next);
        let mut ss = T::zero();
        let mut sy = T::zero();
        for a in 0..n {
            let s = next[a] - prior[a];
            let y = next_grad[a] - grad[a];
            ss += s * s;
            sy += s * y;
        }
        step = if sy < T::zero() && ss > T::zero() { (ss / (-sy)).min(max_step) } else { fixed_step };
        prior = next;
        grad = next_grad;
        value = next_value;
        residual = model.kkt_residual(&prior);
    }
    if residual <= options.kkt_tolerance {
        return InputPrior::new(prior);
    }
    Err(Error::KktNotMet { iterations: options.max_iterations, residual: residual.to_f64_lossy() })
}

/// Mutual information of the implicit channel under `prior`, in bits:
/// `Σ_a ρ(a)d₁(a) − Σ_s R(s)F(s)ln F(s)`, with `F` the f-table for `prior`.
pub fn exact_capacity_objective<T: Real>(
    prior: &InputPrior<T>,
    multipliers: &Multipliers<T>,
    reference: &ReferenceDistribution<T>,
    f: &[T],
    spec: &ProcessSpec<T>,
) -> Result<T> {
    let space = reference.space();
    if f.len() != space.len() {
        return Err(Error::DimensionMismatch("F table does not match the sequence space".into()));
    }
    let linear: T = multipliers
        .linear_terms(spec)
        .iter()
        .zip(prior.as_slice())
        .map(|(&d, &p)| d * p)
        .sum();
    let r = reference.as_slice();
    let entropy_term = space.reduce(
        |c| {
            space
                .chunk_ranks(c)
                .filter(|&k| r[k] > T::zero() && f[k] > T::zero())
                .map(|k| r[k] * f[k] * f[k].ln())
                .sum::<T>()
        },
        |x, y| x + y,
    );
    Ok(nats_to_bits(linear - entropy_term))
}

/// Dense conditional table `W(y|x)`, row-major over inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatrix<T> {
    pub num_inputs: usize,
    pub num_outputs: usize,
    pub prob: Vec<T>,
}

impl<T: Real> ChannelMatrix<T> {
    pub fn new(num_inputs: usize, num_outputs: usize, prob: Vec<T>) -> Result<Self> {
        if num_inputs == 0 || num_outputs == 0 || prob.len() != num_inputs * num_outputs {
            return Err(Error::DimensionMismatch(format!(
                "channel {num_inputs}x{num_outputs} needs {} entries, got {}",
                num_inputs * num_outputs,
                prob.len()
            )));
        }
        let tol = T::tolerance(1e-9, 16.0 * num_outputs as f64);
        for x in 0..num_inputs {
            let row = &prob[x * num_outputs..(x + 1) * num_outputs];
            if row.iter().any(|p| !p.is_finite() || *p < T::zero()) {
                return Err(Error::InvalidProcess(format!("row {x} has a negative or non-finite entry")));
            }
            let total: T = row.iter().copied().sum();
            if (total - T::one()).abs() > tol {
                return Err(Error::InvalidProcess(format!("row {x} sums to {total}, expected 1")));
            }
        }
        Ok(ChannelMatrix { num_inputs, num_outputs, prob })
    }

    pub fn row(&self, x: usize) -> &[T] {
        &self.prob[x * self.num_outputs..(x + 1) * self.num_outputs]
    }

    /// `D(W(·|x) ‖ q)` in nats for every input.
    fn divergences(&self, q: &[T]) -> Vec<T> {
        (0..self.num_inputs)
            .map(|x| {
                self.row(x)
                    .iter()
                    .zip(q)
                    .filter(|(w, _)| **w > T::zero())
                    .map(|(&w, &qy)| w * (w / qy).ln())
                    .sum()
            })
            .collect()
    }

    fn output_distribution(&self, prior: &[T]) -> Vec<T> {
        let mut q = vec![T::zero(); self.num_outputs];
        for (x, &p) in prior.iter().enumerate() {
            for (qy, &w) in q.iter_mut().zip(self.row(x)) {
                *qy += p * w;
            }
        }
        q
    }

    /// Mutual information under `prior`, in nats.
    pub fn mutual_information(&self, prior: &[T]) -> T {
        let q = self.output_distribution(prior);
        self.divergences(&q).iter().zip(prior).map(|(&d, &p)| p * d).sum()
    }
}

/// Blahut–Arimoto capacity result.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityEstimate<T> {
    /// Lower capacity bound at termination, bits.
    pub capacity_bits: T,
    /// Upper capacity bound at termination, bits.
    pub upper_bits: T,
    pub prior: InputPrior<T>,
    pub iterations: usize,
}

/// Capacity of a dense channel by the alternating Blahut–Arimoto update,
/// stopped once the standard bounds `ln Σ_x p(x)e^{D_x} ≤ C ≤ max_x D_x`
/// are within `tolerance_bits`.
pub fn blahut_arimoto<T: Real>(channel: &ChannelMatrix<T>, tolerance_bits: T) -> Result<CapacityEstimate<T>> {
    blahut_arimoto_from(channel, tolerance_bits, None, 1_000_000)
}

pub fn blahut_arimoto_from<T: Real>(
    channel: &ChannelMatrix<T>,
    tolerance_bits: T,
    start: Option<&[T]>,
    max_iterations: usize,
) -> Result<CapacityEstimate<T>> {
    let tolerance = bits_to_nats(tolerance_bits.max(T::epsilon() * T::lit(16.0)));
    let mut prior = match start {
        Some(p) => p.to_vec(),
        None => vec![T::one() / T::from_usize_lossy(channel.num_inputs); channel.num_inputs],
    };
    let mut iterations = 0;
    loop {
        let q = channel.output_distribution(&prior);
        let d = channel.divergences(&q);
        let top = d.iter().copied().fold(T::neg_infinity(), T::max);
        let scaled: Vec<T> = prior.iter().zip(&d).map(|(&p, &dx)| p * (dx - top).exp()).collect();
        let z: T = scaled.iter().copied().sum();
        let lower = top + z.ln();
        if top - lower <= tolerance || iterations >= max_iterations {
            return Ok(CapacityEstimate {
                capacity_bits: nats_to_bits(lower.max(T::zero())),
                upper_bits: nats_to_bits(top),
                prior: InputPrior(prior),
                iterations,
            });
        }
        prior = scaled.into_iter().map(|x| x / z).collect();
        iterations += 1;
    }
}

/// Blahut–Arimoto on the implicit channel `ρ(s|a) = R(s)e^{Σ_b λ}`, using
/// `D_a = d₁(a) − Σ_s ρ(s|a) ln F(s)`. One sweep per inner iteration.
pub fn maximize_exact<T: Real>(
    multipliers: &Multipliers<T>,
    reference: &ReferenceDistribution<T>,
    spec: &ProcessSpec<T>,
    start: &InputPrior<T>,
    tolerance_nats: T,
    max_iterations: usize,
) -> Result<InputPrior<T>> {
    let space = reference.space();
    let na = spec.num_inputs();
    let linear = multipliers.linear_terms(spec);
    let factors = multipliers.exp_factors();
    let tables = FactorTables::new(space, &factors, na);
    let low_len = space.low_len();
    let r = reference.as_slice();
    let mut prior = start.as_slice().to_vec();

    for _ in 0..=max_iterations {
        let cross = space.reduce(
            |c| {
                let mut acc = vec![T::zero(); na];
                let mut w = vec![T::zero(); na];
                for hi in space.chunk(c) {
                    let hrow = &tables.high[hi * na..(hi + 1) * na];
                    for lo in 0..low_len {
                        let weight = r[hi * low_len + lo];
                        if weight == T::zero() {
                            continue;
                        }
                        let lrow = &tables.low[lo * na..(lo + 1) * na];
                        let mut f = T::zero();
                        for a in 0..na {
                            w[a] = lrow[a] * hrow[a];
                            f += prior[a] * w[a];
                        }
                        if f <= T::zero() {
                            continue;
                        }
                        let lf = weight * f.ln();
                        for a in 0..na {
                            acc[a] += lf * w[a];
                        }
                    }
                }
                acc
            },
            |mut x, y| {
                for (p, q) in x.iter_mut().zip(&y) {
                    *p += *q;
                }
                x
            },
        );
        let d: Vec<T> = linear.iter().zip(&cross).map(|(&l, &c)| l - c).collect();
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::Overflow("divergence of the implicit channel is not finite".into()));
        }
        let top = d.iter().copied().fold(T::neg_infinity(), T::max);
        let scaled: Vec<T> = prior.iter().zip(&d).map(|(&p, &dx)| p * (dx - top).exp()).collect();
        let z: T = scaled.iter().copied().sum();
        let gap = -z.ln();
        prior = scaled.into_iter().map(|x| x / z).collect();
        if gap <= tolerance_nats {
            break;
        }
    }
    InputPrior::new(prior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{solve_multipliers, FactorizedChannel};
    use crate::sequence::{f_table, SequenceSpace};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn h2(p: f64) -> f64 {
        -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
    }

    #[test]
    fn binary_symmetric_channel() {
        let p = 0.11;
        let ch = ChannelMatrix::new(2, 2, vec![1.0f64 - p, p, p, 1.0 - p]).unwrap();
        let est = blahut_arimoto(&ch, 1e-9).unwrap();
        assert!((est.capacity_bits - (1.0 - h2(p))).abs() < 1e-6);
        assert!((est.capacity_bits - 0.5).abs() < 1e-3);
    }

    #[test]
    fn noiseless_and_useless_channels() {
        let ch = ChannelMatrix::new(2, 2, vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let est = blahut_arimoto(&ch, 1e-9).unwrap();
        assert!((est.capacity_bits - 1.0).abs() < 1e-9);
        assert!((est.prior.as_slice()[0] - 0.5).abs() < 1e-9);

        let ch = ChannelMatrix::new(3, 2, vec![0.3f64, 0.7, 0.3, 0.7, 0.3, 0.7]).unwrap();
        let est = blahut_arimoto(&ch, 1e-9).unwrap();
        assert!(est.capacity_bits.abs() < 1e-12);
    }

    #[test]
    fn capacity_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let r: Vec<f64> = (0..3).map(|_| rng.gen_range(0.01..1.0)).collect();
                let z: f64 = r.iter().sum();
                r.into_iter().map(|x| x / z).collect()
            })
            .collect();
        let flat = |order: &[usize]| order.iter().flat_map(|&i| rows[i].clone()).collect::<Vec<_>>();
        let c1 = blahut_arimoto(&ChannelMatrix::new(4, 3, flat(&[0, 1, 2, 3])).unwrap(), 1e-10).unwrap();
        let c2 = blahut_arimoto(&ChannelMatrix::new(4, 3, flat(&[2, 0, 3, 1])).unwrap(), 1e-10).unwrap();
        assert!((c1.capacity_bits - c2.capacity_bits).abs() < 1e-9);
    }

    #[test]
    fn flat_model_keeps_uniform() {
        let model = QuadraticModel::new(vec![0.0f64; 4], vec![1.0; 16]).unwrap();
        let p = maximize_quadratic(&model).unwrap();
        assert!(p.as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn identity_model_gives_uniform() {
        let mut gram = vec![0.0f64; 9];
        for a in 0..3 {
            gram[a * 3 + a] = 1.0;
        }
        let model = QuadraticModel::new(vec![0.0; 3], gram).unwrap();
        let p = maximize_quadratic_with(&model, &QuadraticOptions::default(), Some(&[0.7, 0.2, 0.1])).unwrap();
        assert!(p.as_slice().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-9));
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> QuadraticModel<f64> {
        let vecs: Vec<Vec<f64>> = (0..n).map(|_| (0..rank).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut gram = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                gram[a * n + b] = vecs[a].iter().zip(&vecs[b]).map(|(x, y)| x * y).sum();
            }
        }
        let linear = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        QuadraticModel::new(linear, gram).unwrap()
    }

    /// Independent KKT check: gradient constant on the support, not larger off it.
    fn kkt_violation(model: &QuadraticModel<f64>, p: &[f64]) -> f64 {
        let n = model.dim();
        let g: Vec<f64> = (0..n)
            .map(|a| model.linear[a] - 2.0 * (0..n).map(|b| model.gram[a * n + b] * p[b]).sum::<f64>())
            .collect();
        let mu = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (0..n)
            .filter(|&a| p[a] > 1e-9)
            .map(|a| mu - g[a])
            .fold(0.0, f64::max)
    }

    #[test]
    fn random_models_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (n, rank) in [(3, 3), (5, 5), (8, 3), (12, 12), (30, 30)] {
            let model = random_model(&mut rng, n, rank);
            let p = maximize_quadratic(&model).unwrap();
            assert!(kkt_violation(&model, p.as_slice()) < 1e-8);
            let total: f64 = p.as_slice().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            // no random feasible point does better
            for _ in 0..200 {
                let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
                let z: f64 = q.iter().sum();
                let q: Vec<f64> = q.into_iter().map(|x| x / z).collect();
                assert!(model.value(&q) <= model.value(p.as_slice()) + 1e-12);
            }
        }
    }

    #[test]
    fn near_duplicate_inputs_still_converge() {
        // rank-2 Gram with two almost equal rows; the flat direction once sent
        // Barzilai–Borwein steps to 1e12 and broke the projection
        let linear = vec![0.15668770944927196, 0.005693903520660806, 0.1545518210715108, 0.0007362413435888053];
        let gram = vec![
            1.2966297981473978, 0.9419349782129287, 1.2947172351966558, 1.0208967710272245,
            0.9419349782129287, 1.011366176885094, 0.9423093607264105, 0.9959094754722775,
            1.2947172351966558, 0.9423093607264105, 1.2928170037684494, 1.0207620361141903,
            1.0208967710272245, 0.9959094754722775, 1.0207620361141903, 1.0014721212841442,
        ];
        let model = QuadraticModel::<f64>::new(linear, gram).unwrap();
        let p = maximize_quadratic(&model).unwrap();
        assert!(model.kkt_residual(p.as_slice()) <= 1e-10);
        assert!((p.as_slice()[0] - 0.34171).abs() < 1e-6, "{p:?}");
    }

    fn random_spec(rng: &mut ChaCha8Rng, na: usize, nb: usize) -> ProcessSpec<f64> {
        let mut values = Vec::new();
        for _ in 0..na * nb {
            let p: f64 = rng.gen_range(0.05..0.95);
            values.extend([p, 1.0 - p]);
        }
        ProcessSpec::new(na, nb, 2, values).unwrap()
    }

    fn random_reference(rng: &mut ChaCha8Rng, nb: usize) -> ReferenceDistribution<f64> {
        let space = SequenceSpace::new(nb, 2).unwrap();
        let w = (0..space.len()).map(|_| rng.gen_range(0.2..1.0)).collect();
        ReferenceDistribution::from_weights(space, w).unwrap()
    }

    #[test]
    fn zero_multipliers_give_flat_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = random_spec(&mut rng, 3, 3);
        let r = random_reference(&mut rng, 3);
        let lambda = Multipliers::zeros(3, 3, 2);
        let model = quadratic_coefficients(&lambda, &r, &spec).unwrap();
        assert!(model.linear.iter().all(|&x| x == 0.0));
        assert!(model.gram.iter().all(|&x| (x - 1.0).abs() < 1e-14));
        let prior = InputPrior::uniform(3);
        let f = f_table(r.space(), &lambda.exp_factors(), prior.as_slice()).unwrap();
        assert_eq!(exact_capacity_objective(&prior, &lambda, &r, &f, &spec).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_coefficients_match_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = random_spec(&mut rng, 3, 3);
        let r = random_reference(&mut rng, 3);
        let (lambda, _) = solve_multipliers(&r, &spec, None, 1e-12).unwrap();
        let model = quadratic_coefficients(&lambda, &r, &spec).unwrap();
        let space = r.space();
        let weight = |a: usize, k: usize| {
            let e: f64 = (0..3).map(|b| lambda.get(space.digit(k, b), a, b)).sum();
            e.exp()
        };
        for a in 0..3 {
            let d1: f64 = (0..3)
                .flat_map(|b| (0..2).map(move |s| (b, s)))
                .map(|(b, s)| spec.prob(a, b, s) * lambda.get(s, a, b))
                .sum();
            assert!((model.linear[a] - d1).abs() < 1e-12);
            for c in 0..3 {
                let d2: f64 = (0..space.len()).map(|k| r.as_slice()[k] * weight(a, k) * weight(c, k)).sum();
                assert!((model.gram[a * 3 + c] - d2).abs() < 1e-12);
                assert_eq!(model.gram[a * 3 + c], model.gram[c * 3 + a]);
            }
        }
    }

    #[test]
    fn exact_objective_is_mutual_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let spec = random_spec(&mut rng, 3, 2);
            let r = random_reference(&mut rng, 2);
            let (lambda, _) = solve_multipliers(&r, &spec, None, 1e-13).unwrap();
            let prior = InputPrior::new(vec![0.2, 0.5, 0.3]).unwrap();
            let f = f_table(r.space(), &lambda.exp_factors(), prior.as_slice()).unwrap();
            let value = exact_capacity_objective(&prior, &lambda, &r, &f, &spec).unwrap();

            let channel = FactorizedChannel { reference: r.clone(), multipliers: lambda.clone() };
            let dense = channel.materialize();
            let matrix = ChannelMatrix::new(3, 4, dense).unwrap();
            let direct = matrix.mutual_information(prior.as_slice()) / std::f64::consts::LN_2;
            assert!((value - direct).abs() < 1e-10, "{value} vs {direct}");
        }
    }

    #[test]
    fn single_input_carries_no_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = random_spec(&mut rng, 1, 3);
        let r = random_reference(&mut rng, 3);
        let (lambda, _) = solve_multipliers(&r, &spec, None, 1e-13).unwrap();
        let prior = InputPrior::uniform(1);
        let f = f_table(r.space(), &lambda.exp_factors(), prior.as_slice()).unwrap();
        assert!(exact_capacity_objective(&prior, &lambda, &r, &f, &spec).unwrap().abs() < 1e-10);
    }

    #[test]
    fn exact_update_matches_dense_blahut_arimoto() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = random_spec(&mut rng, 3, 2);
        let r = random_reference(&mut rng, 2);
        let (lambda, _) = solve_multipliers(&r, &spec, None, 1e-13).unwrap();
        let prior = maximize_exact(&lambda, &r, &spec, &InputPrior::uniform(3), 1e-13, 100_000).unwrap();
        let channel = FactorizedChannel { reference: r.clone(), multipliers: lambda.clone() };
        let matrix = ChannelMatrix::new(3, 4, channel.materialize()).unwrap();
        let dense = blahut_arimoto(&matrix, 1e-12).unwrap();
        let achieved = matrix.mutual_information(prior.as_slice()) / std::f64::consts::LN_2;
        assert!((achieved - dense.capacity_bits).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn maximizer_ignores_linear_offset(seed in 0u64..1000, offset in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng, 5, 5);
            let shifted = QuadraticModel::new(
                model.linear.iter().map(|x| x + offset).collect(),
                model.gram.clone(),
            ).unwrap();
            let p1 = maximize_quadratic(&model).unwrap();
            let p2 = maximize_quadratic(&shifted).unwrap();
            for (x, y) in p1.as_slice().iter().zip(p2.as_slice()) {
                prop_assert!((x - y).abs() < 1e-7);
            }
        }

        #[test]
        fn simplex_projection_is_feasible(v in proptest::collection::vec(-3.0f64..3.0, 1..12)) {
            let p = project_to_simplex(&v);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
