//! The outcome-sequence space `S^|B|` and the sweeps over it.
//!
//! Sequences are ranked little-endian with the measurement index as the
//! digit position: `rank = Σ_b s_b·|S|^b`. Every sweep splits a rank into a
//! low part (the first `⌈|B|/2⌉` digits) and a high part, and evaluates the
//! product `Π_b e^{λ(s_b,b)}` as `low[lo]·high[hi]`: one multiplication per
//! sequence after two small prefix tables are built.
//!
//! Work is cut into contiguous chunks of high indices whose boundaries depend
//! only on the space size. Partial results are merged with a fixed pairwise
//! tree, so results are bitwise identical for any number of worker threads.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default cap on `|S|^|B|` (number of sequence entries).
pub const DEFAULT_MEMORY_BUDGET: u64 = 1 << 31;

/// Target number of sequences per sweep chunk.
const CHUNK_TARGET: usize = 1 << 14;
const MAX_CHUNKS: usize = 256;

#[derive(Debug)]
struct Layout {
    low_digits: usize,
    low_len: usize,
    high_len: usize,
    /// Flattened nonzero-digit coordinates `b·|S| + s` of every low index.
    low_coords: Vec<u32>,
    low_offsets: Vec<u32>,
    high_coords: Vec<u32>,
    high_offsets: Vec<u32>,
    /// Chunk boundaries over high indices.
    chunk_bounds: Vec<usize>,
}

fn nonzero_coords(
    len: usize,
    first_position: usize,
    digits: usize,
    num_outcomes: usize,
) -> (Vec<u32>, Vec<u32>) {
    let mut coords = Vec::new();
    let mut offsets = Vec::with_capacity(len + 1);
    offsets.push(0u32);
    for idx in 0..len {
        let mut rest = idx;
        for d in 0..digits {
            let s = rest % num_outcomes;
            rest /= num_outcomes;
            if s != 0 {
                coords.push(((first_position + d) * num_outcomes + s) as u32);
            }
        }
        offsets.push(coords.len() as u32);
    }
    (coords, offsets)
}

/// The set `S^|B|` of outcome sequences.
#[derive(Clone, Debug)]
pub struct SequenceSpace {
    num_measurements: usize,
    num_outcomes: usize,
    len: usize,
    layout: Arc<Layout>,
}

impl PartialEq for SequenceSpace {
    fn eq(&self, other: &Self) -> bool {
        self.num_measurements == other.num_measurements && self.num_outcomes == other.num_outcomes
    }
}

impl SequenceSpace {
    pub fn new(num_measurements: usize, num_outcomes: usize) -> Result<Self> {
        Self::with_budget(num_measurements, num_outcomes, DEFAULT_MEMORY_BUDGET)
    }

    /// Fails before allocating anything if `|S|^|B|` exceeds `budget`.
    pub fn with_budget(num_measurements: usize, num_outcomes: usize, budget: u64) -> Result<Self> {
        if num_measurements == 0 || num_outcomes == 0 {
            return Err(Error::InvalidArgument(
                "sequence space needs |B| >= 1 and |S| >= 1".into(),
            ));
        }
        let mut size: u128 = 1;
        for _ in 0..num_measurements {
            size = size.saturating_mul(num_outcomes as u128);
        }
        if size > budget as u128 || size > usize::MAX as u128 || size > u32::MAX as u128 * 4 {
            return Err(Error::BudgetExceeded { size, budget });
        }
        let len = size as usize;

        let low_digits = num_measurements.div_ceil(2);
        let high_digits = num_measurements - low_digits;
        let low_len = num_outcomes.pow(low_digits as u32);
        let high_len = num_outcomes.pow(high_digits as u32);
        let (low_coords, low_offsets) = nonzero_coords(low_len, 0, low_digits, num_outcomes);
        let (high_coords, high_offsets) =
            nonzero_coords(high_len, low_digits, high_digits, num_outcomes);

        let per_chunk = CHUNK_TARGET
            .div_ceil(low_len)
            .max(high_len.div_ceil(MAX_CHUNKS))
            .max(1);
        let mut chunk_bounds: Vec<usize> = (0..high_len).step_by(per_chunk).collect();
        chunk_bounds.push(high_len);

        Ok(SequenceSpace {
            num_measurements,
            num_outcomes,
            len,
            layout: Arc::new(Layout {
                low_digits,
                low_len,
                high_len,
                low_coords,
                low_offsets,
                high_coords,
                high_offsets,
                chunk_bounds,
            }),
        })
    }

    pub fn num_measurements(&self) -> usize {
        self.num_measurements
    }

    pub fn num_outcomes(&self) -> usize {
        self.num_outcomes
    }

    /// `|S|^|B|`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of `(b, s)` coordinates, `|B|·|S|`.
    pub fn num_coords(&self) -> usize {
        self.num_measurements * self.num_outcomes
    }

    pub fn rank(&self, sequence: &[usize]) -> Result<usize> {
        if sequence.len() != self.num_measurements {
            return Err(Error::DimensionMismatch(format!(
                "sequence has {} entries, expected {}",
                sequence.len(),
                self.num_measurements
            )));
        }
        let mut rank = 0usize;
        for &s in sequence.iter().rev() {
            if s >= self.num_outcomes {
                return Err(Error::OutcomeOutOfRange { index: s, num_outcomes: self.num_outcomes });
            }
            rank = rank * self.num_outcomes + s;
        }
        Ok(rank)
    }

    pub fn unrank(&self, mut rank: usize) -> Vec<usize> {
        debug_assert!(rank < self.len);
        (0..self.num_measurements)
            .map(|_| {
                let s = rank % self.num_outcomes;
                rank /= self.num_outcomes;
                s
            })
            .collect()
    }

    /// Outcome at position `b` of the sequence with the given rank.
    #[inline]
    pub fn digit(&self, rank: usize, b: usize) -> usize {
        (rank / self.num_outcomes.pow(b as u32)) % self.num_outcomes
    }

    pub(crate) fn low_len(&self) -> usize {
        self.layout.low_len
    }

    pub(crate) fn num_chunks(&self) -> usize {
        self.layout.chunk_bounds.len() - 1
    }

    /// High-index range of chunk `c`.
    pub(crate) fn chunk(&self, c: usize) -> std::ops::Range<usize> {
        self.layout.chunk_bounds[c]..self.layout.chunk_bounds[c + 1]
    }

    /// Rank range covered by chunk `c`.
    pub(crate) fn chunk_ranks(&self, c: usize) -> std::ops::Range<usize> {
        let r = self.chunk(c);
        r.start * self.layout.low_len..r.end * self.layout.low_len
    }

    #[inline]
    fn low_coords(&self, lo: usize) -> &[u32] {
        let l = &self.layout;
        &l.low_coords[l.low_offsets[lo] as usize..l.low_offsets[lo + 1] as usize]
    }

    #[inline]
    fn high_coords(&self, hi: usize) -> &[u32] {
        let l = &self.layout;
        &l.high_coords[l.high_offsets[hi] as usize..l.high_offsets[hi + 1] as usize]
    }

    /// Maps every chunk in parallel and merges the partials in a fixed
    /// pairwise order.
    pub(crate) fn reduce<A, M, C>(&self, map: M, combine: C) -> A
    where
        A: Send,
        M: Fn(usize) -> A + Sync + Send,
        C: Fn(A, A) -> A + Sync + Send,
    {
        let partials: Vec<A> = (0..self.num_chunks()).into_par_iter().map(map).collect();
        pairwise_reduce(partials, &combine)
    }
}

fn pairwise_reduce<A, C: Fn(A, A) -> A>(mut items: Vec<A>, combine: &C) -> A {
    assert!(!items.is_empty());
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(x) = it.next() {
            match it.next() {
                Some(y) => next.push(combine(x, y)),
                None => next.push(x),
            }
        }
        items = next;
    }
    items.pop().unwrap()
}

/// Deterministic chunked sum of a dense array laid out over `space`.
pub(crate) fn chunked_sum<T: Real>(space: &SequenceSpace, values: &[T]) -> T {
    space.reduce(|c| values[space.chunk_ranks(c)].iter().copied().sum::<T>(), |x, y| x + y)
}

/// Product tables `low[lo·n + i]`, `high[hi·n + i]` of per-position factors
/// for `n` independent factor sets (one per input `a`).
#[derive(Clone, Debug)]
pub(crate) struct FactorTables<T> {
    pub low: Vec<T>,
    pub high: Vec<T>,
}

impl<T: Real> FactorTables<T> {
    /// `factors` is laid out `(i, b, s)`, i.e. `i·|B|·|S| + b·|S| + s`.
    pub fn new(space: &SequenceSpace, factors: &[T], count: usize) -> Self {
        let layout = &space.layout;
        let s_count = space.num_outcomes;
        let width = space.num_coords();
        debug_assert_eq!(factors.len(), count * width);
        let build = |first: usize, digits: usize, len: usize| {
            let mut table = vec![T::one(); len * count];
            let mut filled = 1usize;
            for d in 0..digits {
                let b = first + d;
                // extend entries [0, filled) with digit value s at position d
                for s in (0..s_count).rev() {
                    for idx in 0..filled {
                        let dst = s * filled + idx;
                        for i in 0..count {
                            table[dst * count + i] = table[idx * count + i] * factors[i * width + b * s_count + s];
                        }
                    }
                }
                filled *= s_count;
            }
            table
        };
        let low = build(0, layout.low_digits, layout.low_len);
        let high = build(
            layout.low_digits,
            space.num_measurements - layout.low_digits,
            layout.high_len,
        );
        FactorTables { low, high }
    }
}

/// Reference distribution `R(s)` over the sequence space.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDistribution<T> {
    space: SequenceSpace,
    weights: Vec<T>,
}

impl<T: Real> ReferenceDistribution<T> {
    pub fn uniform(space: SequenceSpace) -> Self {
        let w = T::one() / T::from_usize_lossy(space.len());
        let weights = vec![w; space.len()];
        ReferenceDistribution { space, weights }
    }

    /// Wraps non-negative weights and normalizes them to unit sum.
    pub fn from_weights(space: SequenceSpace, weights: Vec<T>) -> Result<Self> {
        if weights.len() != space.len() {
            return Err(Error::DimensionMismatch(format!(
                "reference has {} entries, sequence space has {}",
                weights.len(),
                space.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(Error::InvalidArgument("reference weights must be finite and >= 0".into()));
        }
        let mut r = ReferenceDistribution { space, weights };
        r.normalize()?;
        Ok(r)
    }

    pub fn space(&self) -> &SequenceSpace {
        &self.space
    }

    pub fn as_slice(&self) -> &[T] {
        &self.weights
    }

    /// Smallest entry; positive means full support.
    pub fn min_weight(&self) -> T {
        self.weights.iter().copied().fold(T::infinity(), T::min)
    }

    /// Rescales to unit sum and returns the previous total.
    pub fn normalize(&mut self) -> Result<T> {
        let total = chunked_sum(&self.space, &self.weights);
        if !(total > T::zero()) || !total.is_finite() {
            return Err(Error::Overflow(format!("reference mass {total} cannot be normalized")));
        }
        let inv = T::one() / total;
        self.weights.par_iter_mut().for_each(|w| *w *= inv);
        Ok(total)
    }

    /// `R ← R·F^α` followed by renormalization; returns the pre-normalization mass.
    pub fn rescale(&mut self, f: &[T], alpha: T) -> Result<T> {
        if f.len() != self.weights.len() {
            return Err(Error::DimensionMismatch("F table does not match the sequence space".into()));
        }
        if alpha == T::one() {
            self.weights.par_iter_mut().zip(f.par_iter()).for_each(|(w, &x)| *w *= x);
        } else {
            self.weights.par_iter_mut().zip(f.par_iter()).for_each(|(w, &x)| *w *= x.powf(alpha));
        }
        self.normalize()
    }

    /// Marginal distribution of the outcome at position `b`.
    pub fn marginal(&self, b: usize) -> Vec<T> {
        let mut m = vec![T::zero(); self.space.num_outcomes];
        for (k, &w) in self.weights.iter().enumerate() {
            m[self.space.digit(k, b)] += w;
        }
        m
    }
}

/// Sums consumed by the Newton step for one input `a`, with
/// `w(s) = R(s)·Π_b e^{λ(s_b,a,b)}`:
/// - `marginal(s,b) = Σ_{s: s_b=s} w(s)`
/// - `pair((s,b),(s',b')) = Σ_{s: s_b=s, s_b'=s'} w(s)`
/// - `total = Σ_s w(s)`
#[derive(Clone, Debug, PartialEq)]
pub struct DualSums<T> {
    num_measurements: usize,
    num_outcomes: usize,
    pub marginals: Vec<T>,
    /// Dense symmetric `(|B||S|)²` matrix over coordinates `b·|S| + s`.
    pub pairs: Vec<T>,
    pub total: T,
}

impl<T: Real> DualSums<T> {
    #[inline]
    pub fn marginal(&self, s: usize, b: usize) -> T {
        self.marginals[b * self.num_outcomes + s]
    }

    #[inline]
    pub fn pair(&self, s: usize, b: usize, s2: usize, b2: usize) -> T {
        let d = self.num_measurements * self.num_outcomes;
        self.pairs[(b * self.num_outcomes + s) * d + b2 * self.num_outcomes + s2]
    }

    pub fn dim(&self) -> usize {
        self.num_measurements * self.num_outcomes
    }
}

struct PartialSums<T> {
    total: T,
    /// marginals over nonzero-digit coordinates
    marginals: Vec<T>,
    /// upper triangle (c < c') over nonzero-digit coordinates, dense storage
    pairs: Vec<T>,
    /// Σ over high indices of the weights, per low index
    low_mass: Vec<T>,
}

impl<T: Real> PartialSums<T> {
    fn add(mut self, other: Self) -> Self {
        self.total += other.total;
        for (x, y) in self.marginals.iter_mut().zip(&other.marginals) {
            *x += *y;
        }
        for (x, y) in self.pairs.iter_mut().zip(&other.pairs) {
            *x += *y;
        }
        for (x, y) in self.low_mass.iter_mut().zip(&other.low_mass) {
            *x += *y;
        }
        self
    }
}

fn check_factors<T: Real>(exp_factors: &[T]) -> Result<()> {
    if exp_factors.iter().any(|x| !x.is_finite() || *x < T::zero()) {
        return Err(Error::Overflow("exponential factors must be finite and >= 0".into()));
    }
    Ok(())
}

/// One pass over the sequence space computing [`DualSums`] for a single
/// input; `exp_factors[b·|S| + s] = e^{λ(s,a,b)}`.
pub fn accumulate_dual_sums<T: Real>(
    reference: &ReferenceDistribution<T>,
    exp_factors: &[T],
) -> Result<DualSums<T>> {
    let space = &reference.space;
    let d = space.num_coords();
    if exp_factors.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "expected {d} exponential factors, got {}",
            exp_factors.len()
        )));
    }
    check_factors(exp_factors)?;
    let tables = FactorTables::new(space, exp_factors, 1);
    let low_len = space.low_len();
    let r = &reference.weights;

    let partial = space.reduce(
        |c| {
            let mut acc = PartialSums {
                total: T::zero(),
                marginals: vec![T::zero(); d],
                pairs: vec![T::zero(); d * d],
                low_mass: vec![T::zero(); low_len],
            };
            let mut low_marg = vec![T::zero(); d];
            for hi in space.chunk(c) {
                let h = tables.high[hi];
                if h == T::zero() {
                    continue;
                }
                let base = hi * low_len;
                let mut hi_total = T::zero();
                low_marg.iter_mut().for_each(|x| *x = T::zero());
                for lo in 0..low_len {
                    let w = r[base + lo] * tables.low[lo] * h;
                    if w == T::zero() {
                        continue;
                    }
                    hi_total += w;
                    acc.low_mass[lo] += w;
                    for &cl in space.low_coords(lo) {
                        low_marg[cl as usize] += w;
                    }
                }
                acc.total += hi_total;
                let hcoords = space.high_coords(hi);
                for (i, &ch) in hcoords.iter().enumerate() {
                    let ch = ch as usize;
                    acc.marginals[ch] += hi_total;
                    for &ch2 in &hcoords[i + 1..] {
                        acc.pairs[ch * d + ch2 as usize] += hi_total;
                    }
                    // low coordinates always precede high ones
                    for (cl, &m) in low_marg.iter().enumerate() {
                        if m != T::zero() {
                            acc.pairs[cl * d + ch] += m;
                        }
                    }
                }
            }
            acc
        },
        PartialSums::add,
    );

    let PartialSums { total, mut marginals, mut pairs, low_mass } = partial;
    if !total.is_finite() {
        return Err(Error::Overflow(format!("total mass {total}")));
    }
    for (lo, &w) in low_mass.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        let lcoords = space.low_coords(lo);
        for (i, &c1) in lcoords.iter().enumerate() {
            marginals[c1 as usize] += w;
            for &c2 in &lcoords[i + 1..] {
                pairs[c1 as usize * d + c2 as usize] += w;
            }
        }
    }
    Ok(complete_sums(space, total, marginals, pairs))
}

/// Fills in zero-digit marginals and pairs from the nonzero-digit sums and
/// builds the full symmetric pair matrix.
fn complete_sums<T: Real>(
    space: &SequenceSpace,
    total: T,
    mut marginals: Vec<T>,
    mut pairs: Vec<T>,
) -> DualSums<T> {
    let ns = space.num_outcomes;
    let nb = space.num_measurements;
    let d = nb * ns;
    let idx = |b: usize, s: usize| b * ns + s;

    for b in 0..nb {
        let rest: T = (1..ns).map(|s| marginals[idx(b, s)]).sum();
        marginals[idx(b, 0)] = total - rest;
    }
    // symmetrize the accumulated upper triangle
    for c1 in 0..d {
        for c2 in c1 + 1..d {
            pairs[c2 * d + c1] = pairs[c1 * d + c2];
        }
    }
    for b in 0..nb {
        for b2 in 0..nb {
            if b == b2 {
                for s in 0..ns {
                    for s2 in 0..ns {
                        pairs[idx(b, s) * d + idx(b2, s2)] =
                            if s == s2 { marginals[idx(b, s)] } else { T::zero() };
                    }
                }
                continue;
            }
            // (0, s2) from the marginal of s2 at b2 minus the nonzero s at b
            for s2 in 1..ns {
                let rest: T = (1..ns).map(|s| pairs[idx(b, s) * d + idx(b2, s2)]).sum();
                pairs[idx(b, 0) * d + idx(b2, s2)] = marginals[idx(b2, s2)] - rest;
            }
            for s in 1..ns {
                let rest: T = (1..ns).map(|s2| pairs[idx(b, s) * d + idx(b2, s2)]).sum();
                pairs[idx(b, s) * d + idx(b2, 0)] = marginals[idx(b, s)] - rest;
            }
            let rest: T = (1..ns).map(|s2| pairs[idx(b, 0) * d + idx(b2, s2)]).sum();
            pairs[idx(b, 0) * d + idx(b2, 0)] = marginals[idx(b, 0)] - rest;
        }
    }
    DualSums { num_measurements: nb, num_outcomes: ns, marginals, pairs, total }
}

/// `T = Σ_s R(s)·Π_b e^{λ(s_b,b)}` alone, for line searches.
pub fn total_mass<T: Real>(reference: &ReferenceDistribution<T>, exp_factors: &[T]) -> Result<T> {
    let space = &reference.space;
    if exp_factors.len() != space.num_coords() {
        return Err(Error::DimensionMismatch("wrong number of exponential factors".into()));
    }
    check_factors(exp_factors)?;
    let tables = FactorTables::new(space, exp_factors, 1);
    let low_len = space.low_len();
    let r = &reference.weights;
    let total = space.reduce(
        |c| {
            let mut acc = T::zero();
            for hi in space.chunk(c) {
                let base = hi * low_len;
                let inner: T = r[base..base + low_len]
                    .iter()
                    .zip(&tables.low)
                    .map(|(&w, &l)| w * l)
                    .sum();
                acc += inner * tables.high[hi];
            }
            acc
        },
        |x, y| x + y,
    );
    if !total.is_finite() {
        return Err(Error::Overflow(format!("total mass {total}")));
    }
    Ok(total)
}

/// `F(s) = Σ_a ρ(a)·Π_b e^{λ(s_b,a,b)}` for every sequence;
/// `exp_factors` is laid out `(a, b, s)`.
pub fn f_table<T: Real>(space: &SequenceSpace, exp_factors: &[T], prior: &[T]) -> Result<Vec<T>> {
    let na = prior.len();
    if exp_factors.len() != na * space.num_coords() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} exponential factors for {na} inputs, got {}",
            na * space.num_coords(),
            exp_factors.len()
        )));
    }
    check_factors(exp_factors)?;
    let tables = FactorTables::new(space, exp_factors, na);
    let low_len = space.low_len();
    let mut out = vec![T::zero(); space.len()];
    let mut slices: Vec<(usize, &mut [T])> = Vec::with_capacity(space.num_chunks());
    let mut rest = out.as_mut_slice();
    for c in 0..space.num_chunks() {
        let n = space.chunk_ranks(c).len();
        let (head, tail) = rest.split_at_mut(n);
        slices.push((c, head));
        rest = tail;
    }
    let overflow = slices
        .into_par_iter()
        .map(|(c, slice)| {
            let mut scaled = vec![T::zero(); na];
            let range = space.chunk(c);
            let first = range.start;
            let mut bad = false;
            for hi in range {
                let hrow = &tables.high[hi * na..(hi + 1) * na];
                for (x, (&p, &h)) in scaled.iter_mut().zip(prior.iter().zip(hrow)) {
                    *x = p * h;
                }
                let out_row = &mut slice[(hi - first) * low_len..(hi - first + 1) * low_len];
                for (lo, f) in out_row.iter_mut().enumerate() {
                    let lrow = &tables.low[lo * na..(lo + 1) * na];
                    let v: T = lrow.iter().zip(&scaled).map(|(&l, &s)| l * s).sum();
                    bad |= !v.is_finite();
                    *f = v;
                }
            }
            bad
        })
        .reduce(|| false, |x, y| x || y);
    if overflow {
        return Err(Error::Overflow("F table entry is not finite".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_reference(space: &SequenceSpace, rng: &mut ChaCha8Rng) -> ReferenceDistribution<f64> {
        let w = (0..space.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
        ReferenceDistribution::from_weights(space.clone(), w).unwrap()
    }

    /// Nested-loop oracle: explicit enumeration of every sequence and digit.
    fn nested_loop_sums(
        space: &SequenceSpace,
        r: &[f64],
        e: &[f64],
    ) -> (Vec<f64>, Vec<f64>, f64) {
        let (nb, ns) = (space.num_measurements(), space.num_outcomes());
        let d = nb * ns;
        let mut m = vec![0.0; d];
        let mut pairs = vec![0.0; d * d];
        let mut total = 0.0;
        for k in 0..space.len() {
            let seq = space.unrank(k);
            let w = r[k] * seq.iter().enumerate().map(|(b, &s)| e[b * ns + s]).product::<f64>();
            total += w;
            for b in 0..nb {
                m[b * ns + seq[b]] += w;
                for b2 in 0..nb {
                    pairs[(b * ns + seq[b]) * d + b2 * ns + seq[b2]] += w;
                }
            }
        }
        (m, pairs, total)
    }

    #[test]
    fn rank_examples() {
        let space = SequenceSpace::new(3, 2).unwrap();
        assert_eq!(space.rank(&[1, 0, 1]).unwrap(), 5);
        assert_eq!(space.rank(&[0, 0, 0]).unwrap(), 0);
        assert!(matches!(
            space.rank(&[0, 2, 0]),
            Err(Error::OutcomeOutOfRange { index: 2, num_outcomes: 2 })
        ));
        assert!(space.rank(&[0, 1]).is_err());
        let space = SequenceSpace::new(4, 3).unwrap();
        for k in 0..space.len() {
            assert_eq!(space.rank(&space.unrank(k)).unwrap(), k);
        }
    }

    #[test]
    fn budget_is_enforced() {
        assert!(matches!(
            SequenceSpace::with_budget(10, 2, 1000),
            Err(Error::BudgetExceeded { size: 1024, budget: 1000 })
        ));
        assert!(SequenceSpace::with_budget(10, 2, 1024).is_ok());
        assert!(SequenceSpace::new(40, 2).is_err());
    }

    #[test]
    fn zero_multipliers_give_reference_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let space = SequenceSpace::new(5, 3).unwrap();
        let r = random_reference(&space, &mut rng);
        let sums = accumulate_dual_sums(&r, &[1.0; 15]).unwrap();
        assert!((sums.total - 1.0).abs() < 1e-14);
        for b in 0..5 {
            let m = r.marginal(b);
            for s in 0..3 {
                assert!((sums.marginal(s, b) - m[s]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_measurement_collapses() {
        let space = SequenceSpace::new(1, 3).unwrap();
        let r = ReferenceDistribution::from_weights(space, vec![0.2f64, 0.3, 0.5]).unwrap();
        let e = [2.0, 0.5, 1.5];
        let sums = accumulate_dual_sums(&r, &e).unwrap();
        for s in 0..3 {
            assert!((sums.marginal(s, 0) - r.as_slice()[s] * e[s]).abs() < 1e-15);
        }
    }

    #[test]
    fn sums_match_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (nb, ns) in [(2, 2), (3, 2), (4, 2), (5, 2), (3, 3), (4, 3), (1, 2), (7, 2)] {
            let space = SequenceSpace::new(nb, ns).unwrap();
            let r = random_reference(&space, &mut rng);
            let mut e: Vec<f64> = (0..nb * ns).map(|_| rng.gen_range(0.1..3.0)).collect();
            if nb > 2 {
                e[ns + 1] = 0.0; // a pinned coordinate
            }
            let sums = accumulate_dual_sums(&r, &e).unwrap();
            let (m, pairs, total) = nested_loop_sums(&space, r.as_slice(), &e);
            assert!((sums.total - total).abs() < 1e-13 * total.max(1.0));
            for (x, y) in sums.marginals.iter().zip(&m) {
                assert!((x - y).abs() < 1e-13, "({nb},{ns}) marginal {x} vs {y}");
            }
            for (x, y) in sums.pairs.iter().zip(&pairs) {
                assert!((x - y).abs() < 1e-13, "({nb},{ns}) pair {x} vs {y}");
            }
            for b in 0..nb {
                let s: f64 = (0..ns).map(|s| sums.marginal(s, b)).sum();
                assert!((s - sums.total).abs() < 1e-13);
            }
            let t = total_mass(&r, &e).unwrap();
            assert!((t - total).abs() < 1e-13);
        }
    }

    #[test]
    fn many_chunks_match_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let space = SequenceSpace::new(16, 2).unwrap();
        assert!(space.num_chunks() > 1);
        let r = random_reference(&space, &mut rng);
        let e: Vec<f64> = (0..32).map(|_| rng.gen_range(0.5..1.5)).collect();
        let sums = accumulate_dual_sums(&r, &e).unwrap();
        let (m, _, total) = nested_loop_sums(&space, r.as_slice(), &e);
        assert!((sums.total - total).abs() < 1e-12 * total);
        for (x, y) in sums.marginals.iter().zip(&m) {
            assert!((x - y).abs() < 1e-12 * total);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let space = SequenceSpace::new(2, 2).unwrap();
        let r = ReferenceDistribution::<f64>::uniform(space.clone());
        assert!(matches!(
            accumulate_dual_sums(&r, &[f64::INFINITY, 1.0, 1.0, 1.0]),
            Err(Error::Overflow(_))
        ));
        assert!(matches!(
            accumulate_dual_sums(&r, &[1e200, 1.0, 1e200, 1.0]),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn f_table_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let space = SequenceSpace::new(4, 2).unwrap();
        let prior = [0.2f64, 0.3, 0.5];
        let f = f_table(&space, &vec![1.0; 24], &prior).unwrap();
        assert!(f.iter().all(|&x| (x - 1.0).abs() < 1e-15));

        let e: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..2.0)).collect();
        let f = f_table(&space, &e, &[1.0]).unwrap();
        for k in 0..space.len() {
            let seq = space.unrank(k);
            let direct: f64 = seq.iter().enumerate().map(|(b, &s)| e[b * 2 + s]).product();
            assert!((f[k] - direct).abs() < 1e-14 * direct);
        }
    }

    #[test]
    fn f_table_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (nb, ns, na) in [(2, 2, 2), (3, 3, 4), (4, 2, 3), (9, 2, 5)] {
            let space = SequenceSpace::new(nb, ns).unwrap();
            let width = nb * ns;
            let lambda: Vec<f64> = (0..na * width).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e: Vec<f64> = lambda.iter().map(|x| x.exp()).collect();
            let mut prior: Vec<f64> = (0..na).map(|_| rng.gen_range(0.1..1.0)).collect();
            let z: f64 = prior.iter().sum();
            prior.iter_mut().for_each(|p| *p /= z);
            let f = f_table(&space, &e, &prior).unwrap();
            for k in 0..space.len() {
                let seq = space.unrank(k);
                let direct: f64 = (0..na)
                    .map(|a| {
                        prior[a]
                            * (0..nb).map(|b| lambda[a * width + b * ns + seq[b]]).sum::<f64>().exp()
                    })
                    .sum();
                assert!((f[k] - direct).abs() < 1e-12 * direct);
            }
        }
    }

    #[test]
    fn sweeps_are_thread_count_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let space = SequenceSpace::new(17, 2).unwrap();
        let r = random_reference(&space, &mut rng);
        let e: Vec<f64> = (0..34).map(|_| rng.gen_range(0.5..1.5)).collect();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| accumulate_dual_sums(&r, &e).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one, four);
    }

    #[test]
    fn rescale_normalizes() {
        let space = SequenceSpace::new(2, 2).unwrap();
        let mut r = ReferenceDistribution::<f64>::uniform(space);
        let z = r.rescale(&[1.0, 2.0, 3.0, 2.0], 1.0).unwrap();
        assert!((z - 2.0).abs() < 1e-15);
        assert!((r.as_slice()[2] - 0.375).abs() < 1e-15);
        let z = r.rescale(&[1.0, 1.0, 1.0, 1.0], 1.5).unwrap();
        assert!((z - 1.0).abs() < 1e-15);
    }
}
