//! Brute-force reference for small instances.
//!
//! Materializes `ρ(s|a)` densely and minimizes the channel capacity over the
//! polytope of channels with the prescribed marginals by affine-scaling
//! gradient descent, which keeps the marginals fixed and the entries
//! positive. Each run is certified by a lower bound from the directional
//! derivative, minimized over the polytope's enumerated vertices after
//! near-empty outputs are rounded away. Nothing here touches the multiplier
//! or sweep code used by the solver.

use itertools::Itertools;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capacity::{blahut_arimoto_from, ChannelMatrix};
use crate::dual::FactorizedChannel;
use crate::error::{Error, Result};
use crate::model::{validate_process, ProcessSpec};
use crate::scalar::Real;
use crate::sequence::SequenceSpace;

pub const MAX_ORACLE_INPUTS: usize = 4;
pub const MAX_ORACLE_MEASUREMENTS: usize = 4;
pub const ORACLE_RESTARTS: u64 = 16;

/// Dense `ρ(s|a)`, input-major over the sequence space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseChannel<T> {
    pub num_inputs: usize,
    pub num_measurements: usize,
    pub num_outcomes: usize,
    pub prob: Vec<T>,
}

impl<T: Real> DenseChannel<T> {
    pub fn new(num_inputs: usize, space: &SequenceSpace, prob: Vec<T>) -> Result<Self> {
        if prob.len() != num_inputs * space.len() {
            return Err(Error::DimensionMismatch(format!(
                "dense channel needs {} entries, got {}",
                num_inputs * space.len(),
                prob.len()
            )));
        }
        Ok(DenseChannel {
            num_inputs,
            num_measurements: space.num_measurements(),
            num_outcomes: space.num_outcomes(),
            prob,
        })
    }

    /// `ρ(s|a) = Π_b P(s_b|a,b)`; always reproduces the marginals.
    pub fn product(spec: &ProcessSpec<T>) -> Result<Self> {
        let space = SequenceSpace::new(spec.num_measurements(), spec.num_outcomes())?;
        let prob = (0..spec.num_inputs())
            .flat_map(|a| (0..space.len()).map(move |k| (a, k)))
            .map(|(a, k)| {
                (0..spec.num_measurements())
                    .map(|b| spec.prob(a, b, space.digit(k, b)))
                    .fold(T::one(), |acc, p| acc * p)
            })
            .collect();
        DenseChannel::new(spec.num_inputs(), &space, prob)
    }

    pub fn from_factorized(channel: &FactorizedChannel<T>) -> Result<Self> {
        let space = channel.reference.space();
        DenseChannel::new(channel.multipliers.num_inputs(), space, channel.materialize())
    }

    pub fn num_sequences(&self) -> usize {
        self.prob.len() / self.num_inputs.max(1)
    }

    pub fn row(&self, a: usize) -> &[T] {
        let n = self.num_sequences();
        &self.prob[a * n..(a + 1) * n]
    }

    /// Capacity in bits by Blahut–Arimoto.
    pub fn capacity_bits(&self, tolerance_bits: T) -> Result<T> {
        let matrix = ChannelMatrix::new(self.num_inputs, self.num_sequences(), self.prob.clone())?;
        Ok(blahut_arimoto_from(&matrix, tolerance_bits, None, 1_000_000)?.capacity_bits)
    }
}

/// Outcome of [`check_membership`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport<T> {
    /// `max_{a,b,s} |Σ_{s: s_b = s} ρ(s|a) − P(s|a,b)|`.
    pub max_violation: T,
    pub tolerance: T,
    pub is_member: bool,
}

pub fn check_membership<T: Real>(
    channel: &DenseChannel<T>,
    spec: &ProcessSpec<T>,
    tolerance: T,
) -> Result<MembershipReport<T>> {
    if channel.num_inputs != spec.num_inputs()
        || channel.num_measurements != spec.num_measurements()
        || channel.num_outcomes != spec.num_outcomes()
    {
        return Err(Error::DimensionMismatch("channel and process dimensions differ".into()));
    }
    let space = SequenceSpace::new(spec.num_measurements(), spec.num_outcomes())?;
    let mut worst = T::zero();
    for a in 0..spec.num_inputs() {
        let row = channel.row(a);
        for b in 0..spec.num_measurements() {
            let mut marginal = vec![T::zero(); spec.num_outcomes()];
            for (k, &w) in row.iter().enumerate() {
                marginal[space.digit(k, b)] += w;
            }
            for (s, &m) in marginal.iter().enumerate() {
                worst = worst.max((m - spec.prob(a, b, s)).abs());
            }
        }
    }
    Ok(MembershipReport { max_violation: worst, tolerance, is_member: worst <= tolerance })
}

/// Result of [`brute_force_complexity`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate<T> {
    /// Capacity of the best channel found, bits.
    pub value_bits: T,
    /// Certified lower bound on the minimum.
    pub lower_bits: T,
    /// Largest disagreement between certified restarts, bits.
    pub spread_bits: T,
    pub certified_restarts: usize,
    pub channel: DenseChannel<T>,
}

/// Minimum channel capacity over the channels reproducing `spec`, within
/// `tolerance_bits`. Only for `|A| ≤ 4`, `|B| ≤ 4`, `|S| = 2`.
pub fn brute_force_complexity<T: Real>(spec: &ProcessSpec<T>, tolerance_bits: T) -> Result<OracleEstimate<T>> {
    if spec.num_inputs() > MAX_ORACLE_INPUTS
        || spec.num_measurements() > MAX_ORACLE_MEASUREMENTS
        || spec.num_outcomes() != 2
    {
        return Err(Error::OracleTooLarge(format!(
            "|A| = {}, |B| = {}, |S| = {}; the oracle handles |A| <= {MAX_ORACLE_INPUTS}, |B| <= {MAX_ORACLE_MEASUREMENTS}, |S| = 2",
            spec.num_inputs(),
            spec.num_measurements(),
            spec.num_outcomes()
        )));
    }
    validate_process(spec).into_result()?;
    let tol = tolerance_bits.to_f64_lossy();
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("oracle tolerance must be > 0".into()));
    }
    let spec64: ProcessSpec<f64> = spec.cast();
    let problem = Problem::new(&spec64, tol)?;

    let mut results = Vec::new();
    let mut best_uncertified = f64::INFINITY;
    for seed in 0..ORACLE_RESTARTS {
        let start = problem.start(seed);
        let run = problem.descend(start, tol)?;
        if run.gap <= tol {
            results.push(run);
        } else {
            best_uncertified = best_uncertified.min(run.gap);
        }
    }
    if results.is_empty() {
        return Err(Error::OracleNotCertified { gap: best_uncertified, tolerance: tol });
    }
    let lo = results.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let hi = results.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 10.0 * tol {
        return Err(Error::OracleDisagreement { spread: hi - lo, limit: 10.0 * tol });
    }
    let certified = results.len();
    let best = results
        .into_iter()
        .min_by(|x, y| x.value.total_cmp(&y.value))
        .expect("at least one certified restart");
    let space = SequenceSpace::new(spec.num_measurements(), spec.num_outcomes())?;
    Ok(OracleEstimate {
        value_bits: T::lit(best.value),
        lower_bits: T::lit(best.value - best.gap),
        spread_bits: T::lit(hi - lo),
        certified_restarts: certified,
        channel: DenseChannel::new(spec.num_inputs(), &space, best.channel.iter().map(|&x| T::lit(x)).collect())?,
    })
}

struct Evaluation {
    upper: f64,
    value: f64,
    mutual: f64,
    grad: Vec<f64>,
    prior: Vec<f64>,
}

struct Run {
    value: f64,
    gap: f64,
    channel: Vec<f64>,
}

/// Per-input polytope `{w ≥ 0 : M w = rhs_a}`.
struct Problem {
    num_inputs: usize,
    n: usize,
    constraints: DMatrix<f64>,
    normal: Cholesky<f64, Dyn>,
    rhs: Vec<DVector<f64>>,
    vertices: Vec<Vec<Vec<f64>>>,
    product: Vec<f64>,
    capacity_tolerance: f64,
}

const MAX_DESCENT_STEPS: usize = 20_000;
const CERTIFY_EVERY: usize = 25;
const FRANK_WOLFE_ROUNDS: usize = 400;
const FLOOR: f64 = 1e-15;

impl Problem {
    fn new(spec: &ProcessSpec<f64>, tolerance: f64) -> Result<Self> {
        let space = SequenceSpace::new(spec.num_measurements(), spec.num_outcomes())?;
        let n = space.len();
        let ns = spec.num_outcomes();
        // every outcome of the first measurement, all but the last of the others
        let rows: Vec<(usize, usize)> = (0..spec.num_measurements())
            .flat_map(|b| (0..if b == 0 { ns } else { ns - 1 }).map(move |s| (b, s)))
            .collect();
        let constraints = DMatrix::from_fn(rows.len(), n, |i, k| {
            let (b, s) = rows[i];
            if space.digit(k, b) == s {
                1.0
            } else {
                0.0
            }
        });
        let normal = (&constraints * constraints.transpose())
            .cholesky()
            .ok_or_else(|| Error::InvalidProcess("marginal constraints are degenerate".into()))?;
        let rhs: Vec<DVector<f64>> = (0..spec.num_inputs())
            .map(|a| DVector::from_iterator(rows.len(), rows.iter().map(|&(b, s)| spec.prob(a, b, s))))
            .collect();
        let vertices = rhs.iter().map(|r| enumerate_vertices(&constraints, r)).collect::<Vec<_>>();
        if vertices.iter().any(|v| v.is_empty()) {
            return Err(Error::InvalidProcess("no channel reproduces these marginals".into()));
        }
        let product = DenseChannel::product(spec)?.prob;
        let capacity_tolerance = (1e-2 * tolerance).max(1e-13);
        Ok(Problem { num_inputs: spec.num_inputs(), n, constraints, normal, rhs, vertices, product, capacity_tolerance })
    }

    /// Least-squares correction back onto `{M x = rhs_a}`, clipped at zero.
    fn restore(&self, a: usize, x: &mut [f64]) {
        let v = DVector::from_column_slice(x);
        let residual = &self.constraints * &v - &self.rhs[a];
        let fixed = v - self.constraints.transpose() * self.normal.solve(&residual);
        for (dst, &val) in x.iter_mut().zip(fixed.iter()) {
            *dst = val.max(0.0);
        }
    }

    /// Restart 0 is the product channel; the rest mix it with a random
    /// convex combination of vertices, which stays inside the polytope.
    fn start(&self, seed: u64) -> Vec<f64> {
        if seed == 0 {
            return self.product.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = rng.gen_range(0.2..0.8);
        let mut w = Vec::with_capacity(self.product.len());
        for a in 0..self.num_inputs {
            let vertices = &self.vertices[a];
            let weights: Vec<f64> = vertices.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for k in 0..self.n {
                let random: f64 = vertices.iter().zip(&weights).map(|(v, &c)| v[k] * c).sum::<f64>() / total;
                w.push((1.0 - mix) * self.product[a * self.n + k] + mix * random);
            }
        }
        w
    }

    /// Descent direction `−D(g − Mᵀy)` with `D = diag(w)` and `y` from the
    /// weighted normal equations `M D Mᵀ y = M D g`; it keeps `M w` fixed.
    fn direction(&self, w: &[f64], grad: &[f64]) -> Vec<f64> {
        let mut d = Vec::with_capacity(w.len());
        for a in 0..self.num_inputs {
            let wa = DVector::from_column_slice(&w[a * self.n..(a + 1) * self.n]);
            let ga = DVector::from_column_slice(&grad[a * self.n..(a + 1) * self.n]);
            let scaled_t = DMatrix::from_fn(self.n, self.constraints.nrows(), |k, i| self.constraints[(i, k)] * wa[k]);
            let system = &self.constraints * &scaled_t;
            let rhs = &self.constraints * wa.component_mul(&ga);
            let y = match system.clone().cholesky() {
                Some(c) => c.solve(&rhs),
                None => system.svd(true, true).solve(&rhs, 1e-300).unwrap_or_else(|_| DVector::zeros(rhs.len())),
            };
            let reduced = ga - self.constraints.transpose() * y;
            d.extend(wa.iter().zip(reduced.iter()).map(|(&x, &r)| -x * r));
        }
        d
    }

    /// Capacity of `w` by Blahut–Arimoto with the optimizing prior `p`.
    /// `mutual` is `I(p, w)` and `grad` its gradient `p(a)·log₂(w(s|a)/q(s))`;
    /// `I(p, ·)` is convex for any `p`, so bounds built from them stay valid
    /// however loosely `p` was computed.
    fn evaluate(&self, w: &[f64], warm: Option<&[f64]>) -> Result<Evaluation> {
        let matrix = ChannelMatrix::new(self.num_inputs, self.n, w.to_vec())?;
        let est = blahut_arimoto_from(&matrix, self.capacity_tolerance, warm, 1_000_000)?;
        let prior = est.prior.into_inner();
        let mut q = vec![0.0; self.n];
        for a in 0..self.num_inputs {
            for k in 0..self.n {
                q[k] += prior[a] * w[a * self.n + k];
            }
        }
        let grad: Vec<f64> = (0..self.num_inputs * self.n)
            .map(|i| {
                let (a, k) = (i / self.n, i % self.n);
                if q[k] > 0.0 {
                    prior[a] * (w[i].max(1e-300) / q[k]).log2()
                } else {
                    0.0
                }
            })
            .collect();
        let mutual = grad.iter().zip(w).filter(|(_, &x)| x > 0.0).map(|(g, x)| g * x).sum();
        Ok(Evaluation { upper: est.upper_bits, value: est.capacity_bits, mutual, grad, prior })
    }

    /// Zeroes every column whose output mass is at most `threshold` and
    /// re-solves the marginals on the remaining support.
    fn round_columns(&self, w: &[f64], prior: &[f64], threshold: f64) -> Option<(Vec<f64>, Vec<bool>)> {
        let empty: Vec<bool> = (0..self.n)
            .map(|k| (0..self.num_inputs).map(|a| prior[a] * w[a * self.n + k]).sum::<f64>() <= threshold)
            .collect();
        let support: Vec<usize> = (0..self.n).filter(|&k| !empty[k]).collect();
        let sub = DMatrix::from_fn(self.constraints.nrows(), support.len(), |i, j| self.constraints[(i, support[j])]);
        let normal = &sub * sub.transpose();
        let svd = normal.svd(true, true);
        let mut rounded = vec![0.0; w.len()];
        for a in 0..self.num_inputs {
            let x = DVector::from_iterator(support.len(), support.iter().map(|&k| w[a * self.n + k]));
            let residual = &sub * &x - &self.rhs[a];
            let y = svd.solve(&residual, 1e-14).ok()?;
            let fixed = x - sub.transpose() * y;
            if fixed.iter().any(|&v| v < -1e-14) || (&sub * &fixed - &self.rhs[a]).amax() > 1e-12 {
                return None;
            }
            for (j, &k) in support.iter().enumerate() {
                rounded[a * self.n + k] = fixed[j].max(0.0);
            }
        }
        Some((rounded, empty))
    }

    /// Lower bound on the minimum from the directional derivative at `w`.
    ///
    /// Off the empty columns the derivative along `v − w` is `⟨g, v − w⟩`.
    /// Mass moved into an empty column `k` adds `h_k(v) = Σ_a p(a)v_ak
    /// log(v_ak/Σ p v)`, which is convex and homogeneous, so every positive
    /// `u` gives the linear minorant `Σ_a p(a)v_ak log(u_ak/Σ p u)`. Frank–Wolfe
    /// on the full derivative picks `u` and the best minorant is kept.
    fn lower_bound_at(&self, w: &[f64], empty: &[bool], warm: &[f64]) -> Result<(f64, f64)> {
        let Evaluation { upper, mutual, grad, prior, .. } = self.evaluate(w, Some(warm))?;
        let (na, n) = (self.num_inputs, self.n);
        let here: f64 = (0..na * n).filter(|i| !empty[i % n]).map(|i| grad[i] * w[i]).sum();
        let mut coeff = grad.clone();
        let mut d = vec![0.0; na * n];
        let mut best = f64::NEG_INFINITY;
        for round in 0..FRANK_WOLFE_ROUNDS {
            if round > 0 {
                for k in (0..n).filter(|&k| empty[k]) {
                    let mass: f64 = (0..na).map(|a| prior[a] * (d[a * n + k] + FLOOR)).sum();
                    for a in 0..na {
                        coeff[a * n + k] = prior[a] * ((d[a * n + k] + FLOOR) / mass).log2();
                    }
                }
            } else {
                for k in (0..n).filter(|&k| empty[k]) {
                    (0..na).for_each(|a| coeff[a * n + k] = 0.0);
                }
            }
            let mut bound = -here;
            let step = 2.0 / (round as f64 + 2.0);
            for a in 0..na {
                let c = &coeff[a * n..(a + 1) * n];
                let (vertex, inner) = self.vertices[a]
                    .iter()
                    .map(|v| (v, c.iter().zip(v).map(|(x, y)| x * y).sum::<f64>()))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
                    .expect("polytope has vertices");
                bound += inner;
                for (dst, &v) in d[a * n..(a + 1) * n].iter_mut().zip(vertex) {
                    *dst += step * (v - *dst);
                }
            }
            best = best.max(mutual + bound.min(0.0));
            if upper - best <= FLOOR {
                break;
            }
        }
        Ok((upper, best))
    }

    /// Best `(upper, lower)` pair over a few column-rounding thresholds.
    fn certify(&self, w: &[f64], value: f64, prior: &[f64]) -> Result<(f64, f64)> {
        let mut upper = value;
        let mut lower = f64::NEG_INFINITY;
        for threshold in [0.0, 1e-15, 1e-13, 1e-11, 1e-9] {
            let Some((rounded, empty)) = self.round_columns(w, prior, threshold) else {
                continue;
            };
            let (v, l) = self.lower_bound_at(&rounded, &empty, prior)?;
            upper = upper.min(v);
            lower = lower.max(l);
        }
        Ok((upper, lower))
    }

    fn descend(&self, start: Vec<f64>, tol: f64) -> Result<Run> {
        let mut w = start;
        let Evaluation { mut upper, mut value, mut grad, mut prior, .. } = self.evaluate(&w, None)?;
        let mut bounds = (value, f64::NEG_INFINITY);
        let mut step = 1.0f64;
        for iteration in 0..MAX_DESCENT_STEPS {
            if iteration % CERTIFY_EVERY == CERTIFY_EVERY - 1 {
                bounds = self.certify(&w, upper, &prior)?;
                if bounds.0 - bounds.1 <= tol {
                    break;
                }
            }
            let d = self.direction(&w, &grad);
            let decrease: f64 = -grad.iter().zip(&d).map(|(g, x)| g * x).sum::<f64>();
            if !(decrease > 0.0) {
                break;
            }
            // ratio test keeps every entry nonnegative
            let boundary = w
                .iter()
                .zip(&d)
                .filter(|(_, &x)| x < 0.0)
                .map(|(&v, &x)| -v / x)
                .fold(f64::INFINITY, f64::min);
            step = (2.0 * step).min(0.99 * boundary);
            let mut accepted = false;
            while step > 1e-18 {
                let mut trial: Vec<f64> = w.iter().zip(&d).map(|(&v, &x)| (v + step * x).max(0.0)).collect();
                if iteration % 16 == 15 {
                    for a in 0..self.num_inputs {
                        self.restore(a, &mut trial[a * self.n..(a + 1) * self.n]);
                    }
                }
                let eval = self.evaluate(&trial, Some(&prior))?;
                if eval.value <= value - 1e-4 * step * decrease {
                    w = trial;
                    (upper, value, grad, prior) = (eval.upper, eval.value, eval.grad, eval.prior);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if bounds.0 - bounds.1 > tol {
            bounds = self.certify(&w, upper, &prior)?;
        }
        let (upper, lower) = bounds;
        Ok(Run { value: upper, gap: (upper - lower).max(0.0), channel: w })
    }
}

/// Basic feasible solutions of `{x ≥ 0 : M x = rhs}`.
fn enumerate_vertices(constraints: &DMatrix<f64>, rhs: &DVector<f64>) -> Vec<Vec<f64>> {
    let (rank, n) = constraints.shape();
    let mut vertices = Vec::new();
    for basis in (0..n).combinations(rank) {
        let sub = DMatrix::from_fn(rank, rank, |i, j| constraints[(i, basis[j])]);
        let Some(lu) = Some(sub.lu()).filter(|lu| lu.determinant().abs() > 1e-9) else {
            continue;
        };
        let Some(x) = lu.solve(rhs) else {
            continue;
        };
        if x.iter().all(|&v| v >= -1e-12) {
            let mut vertex = vec![0.0; n];
            for (j, &col) in basis.iter().enumerate() {
                vertex[col] = x[j].max(0.0);
            }
            vertices.push(vertex);
        }
    }
    vertices
}
