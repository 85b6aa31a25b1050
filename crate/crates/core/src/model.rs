//! Process tables `P(s|a,b)`, their validation, and the qubit problem generators.
//!
//! A process is stored densely in `(a, b, s)` order with `s` varying fastest.
//! For the qubit generators the outcome `s = +1` is stored at index 0 and
//! `s = -1` at index 1.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Tolerance on `Σ_s P(s|a,b) = 1` used by [`validate_process`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Conditional probability table `P(s|a,b)` of a prepare-and-measure process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProcessFile<T>", into = "ProcessFile<T>")]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct ProcessSpec<T> {
    num_inputs: usize,
    num_measurements: usize,
    num_outcomes: usize,
    prob: Vec<T>,
}

/// On-disk layout of a process.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ProcessFile<T> {
    #[serde(default = "schema_version")]
    schema: u32,
    num_inputs: usize,
    num_measurements: usize,
    num_outcomes: usize,
    prob: Vec<T>,
}

fn schema_version() -> u32 {
    1
}

impl<T: Real> TryFrom<ProcessFile<T>> for ProcessSpec<T> {
    type Error = Error;

    fn try_from(file: ProcessFile<T>) -> Result<Self> {
        if file.schema != 1 {
            return Err(Error::InvalidProcess(format!(
                "unsupported schema version {}",
                file.schema
            )));
        }
        ProcessSpec::new(file.num_inputs, file.num_measurements, file.num_outcomes, file.prob)
    }
}

impl<T: Real> From<ProcessSpec<T>> for ProcessFile<T> {
    fn from(spec: ProcessSpec<T>) -> Self {
        ProcessFile {
            schema: 1,
            num_inputs: spec.num_inputs,
            num_measurements: spec.num_measurements,
            num_outcomes: spec.num_outcomes,
            prob: spec.prob,
        }
    }
}

impl<T: Real> ProcessSpec<T> {
    /// Wraps a flat `(a, b, s)`-ordered table. Only the shape is checked here;
    /// use [`validate_process`] for the probability invariants.
    pub fn new(
        num_inputs: usize,
        num_measurements: usize,
        num_outcomes: usize,
        prob: Vec<T>,
    ) -> Result<Self> {
        if num_inputs == 0 || num_measurements == 0 || num_outcomes == 0 {
            return Err(Error::DimensionMismatch(format!(
                "all dimensions must be positive, got |A|={num_inputs}, |B|={num_measurements}, |S|={num_outcomes}"
            )));
        }
        let expected = num_inputs
            .checked_mul(num_measurements)
            .and_then(|n| n.checked_mul(num_outcomes))
            .ok_or_else(|| Error::DimensionMismatch("table size overflows".into()))?;
        if prob.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "expected {expected} entries for |A|={num_inputs}, |B|={num_measurements}, |S|={num_outcomes}, got {}",
                prob.len()
            )));
        }
        Ok(ProcessSpec { num_inputs, num_measurements, num_outcomes, prob })
    }

    /// Builds a table from a closure `f(a, b, s)`.
    pub fn from_fn(
        num_inputs: usize,
        num_measurements: usize,
        num_outcomes: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut prob = Vec::with_capacity(num_inputs * num_measurements * num_outcomes);
        for a in 0..num_inputs {
            for b in 0..num_measurements {
                for s in 0..num_outcomes {
                    prob.push(f(a, b, s));
                }
            }
        }
        Self::new(num_inputs, num_measurements, num_outcomes, prob)
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_measurements(&self) -> usize {
        self.num_measurements
    }

    pub fn num_outcomes(&self) -> usize {
        self.num_outcomes
    }

    #[inline]
    pub fn prob(&self, a: usize, b: usize, s: usize) -> T {
        self.prob[(a * self.num_measurements + b) * self.num_outcomes + s]
    }

    /// The `(b, s)` slice for input `a`, laid out `b * |S| + s`.
    #[inline]
    pub fn input_slice(&self, a: usize) -> &[T] {
        let width = self.num_measurements * self.num_outcomes;
        &self.prob[a * width..(a + 1) * width]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.prob
    }

    /// Converts the table to another scalar type.
    pub fn cast<U: Real>(&self) -> ProcessSpec<U> {
        ProcessSpec {
            num_inputs: self.num_inputs,
            num_measurements: self.num_measurements,
            num_outcomes: self.num_outcomes,
            prob: self.prob.iter().map(|&p| U::lit(p.to_f64_lossy())).collect(),
        }
    }
}

/// One broken invariant of a process table.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonFinite { a: usize, b: usize, s: usize },
    Negative { a: usize, b: usize, s: usize, value: f64 },
    RowSum { a: usize, b: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::NonFinite { a, b, s } => {
                write!(f, "P(s={s}|a={a},b={b}) is not finite")
            }
            Violation::Negative { a, b, s, value } => {
                write!(f, "P(s={s}|a={a},b={b}) = {value} is negative")
            }
            Violation::RowSum { a, b, sum } => {
                write!(f, "row (a={a},b={b}) sums to {sum}, expected 1")
            }
        }
    }
}

/// Outcome of [`validate_process`]; empty means valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(first) => Err(Error::InvalidProcess(format!(
                "{first} ({} violation(s) total)",
                self.violations.len()
            ))),
        }
    }
}

/// Checks non-negativity and row normalization of every `(a, b)` row.
pub fn validate_process<T: Real>(spec: &ProcessSpec<T>) -> ValidationReport {
    let tol = T::lit(ROW_SUM_TOLERANCE).max(T::epsilon() * T::from_usize_lossy(4 * spec.num_outcomes));
    let mut violations = Vec::new();
    for a in 0..spec.num_inputs {
        for b in 0..spec.num_measurements {
            let mut sum = T::zero();
            let mut finite = true;
            for s in 0..spec.num_outcomes {
                let p = spec.prob(a, b, s);
                if !p.is_finite() {
                    violations.push(Violation::NonFinite { a, b, s });
                    finite = false;
                    continue;
                }
                if p < T::zero() {
                    violations.push(Violation::Negative { a, b, s, value: p.to_f64_lossy() });
                }
                sum += p;
            }
            if finite && (sum - T::one()).abs() > tol {
                violations.push(Violation::RowSum { a, b, sum: sum.to_f64_lossy() });
            }
        }
    }
    ValidationReport { violations }
}

/// `cos(π·num/den)` with exact values at multiples of `π/2` and exact
/// reflection symmetry, so antipodal pairs give exact `±1`.
pub(crate) fn cos_pi_ratio<T: Real>(num: i64, den: i64) -> T {
    debug_assert!(den > 0);
    let period = 2 * den;
    let mut r = num.rem_euclid(period);
    if r > den {
        r = period - r;
    }
    // r in [0, den]
    let (r, sign) = if 2 * r > den { (den - r, -T::one()) } else { (r, T::one()) };
    // r in [0, den/2]
    let value = if r == 0 {
        T::one()
    } else if 2 * r == den {
        T::zero()
    } else {
        (T::PI() * T::lit(r as f64) / T::lit(den as f64)).cos()
    };
    sign * value
}

fn sin_pi_ratio<T: Real>(num: i64, den: i64) -> T {
    cos_pi_ratio(2 * num - den, 2 * den)
}

fn qubit_row<T: Real>(inner: T) -> [T; 2] {
    let half = T::lit(0.5);
    [half * (T::one() + inner), half * (T::one() - inner)]
}

/// Unit Bloch vectors of prepared states and of measurement axes.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochConfig<T> {
    pub states: Vec<[T; 3]>,
    pub measurements: Vec<[T; 3]>,
}

impl<T: Real> BlochConfig<T> {
    pub fn new(states: Vec<[T; 3]>, measurements: Vec<[T; 3]>) -> Result<Self> {
        let config = BlochConfig { states, measurements };
        config.check_norms()?;
        Ok(config)
    }

    fn check_norms(&self) -> Result<()> {
        let tol = T::tolerance(1e-12, 8.0);
        for (kind, vectors) in [("state", &self.states), ("measurement", &self.measurements)] {
            for (i, v) in vectors.iter().enumerate() {
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if (norm - T::one()).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "{kind} vector {i} has norm {norm}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `P(s|a,b) = (1 + s v_a·w_b)/2` from plain floating-point dot products.
    pub fn to_process(&self) -> Result<ProcessSpec<T>> {
        if self.states.is_empty() || self.measurements.is_empty() {
            return Err(Error::InvalidArgument("need at least one state and one measurement".into()));
        }
        ProcessSpec::from_fn(self.states.len(), self.measurements.len(), 2, |a, b, s| {
            let v = &self.states[a];
            let w = &self.measurements[b];
            let inner = (v[0] * w[0] + v[1] * w[1] + v[2] * w[2]).max(-T::one()).min(T::one());
            qubit_row(inner)[s]
        })
    }
}

fn check_counts(num_states: usize, num_measurements: usize) -> Result<()> {
    if num_states == 0 || num_measurements == 0 {
        return Err(Error::InvalidArgument(format!(
            "planar problem needs positive counts, got |A|={num_states}, |B|={num_measurements}"
        )));
    }
    Ok(())
}

/// States at angles `2πa/|A|` and measurements at `πb/|B|` in the x–y plane,
/// `a ∈ 1..=|A|`, `b ∈ 1..=|B|`.
pub fn planar_config<T: Real>(num_states: usize, num_measurements: usize) -> Result<BlochConfig<T>> {
    check_counts(num_states, num_measurements)?;
    let na = num_states as i64;
    let nb = num_measurements as i64;
    let states = (1..=na)
        .map(|a| [cos_pi_ratio(2 * a, na), sin_pi_ratio(2 * a, na), T::zero()])
        .collect();
    let measurements = (1..=nb)
        .map(|b| [cos_pi_ratio(b, nb), sin_pi_ratio(b, nb), T::zero()])
        .collect();
    BlochConfig::new(states, measurements)
}

/// Qubit process with states and measurements equidistributed on a plane.
///
/// Inner products are evaluated from the exact angle difference, so
/// antipodal pairs produce exact zeros.
pub fn planar_problem<T: Real>(num_states: usize, num_measurements: usize) -> Result<ProcessSpec<T>> {
    check_counts(num_states, num_measurements)?;
    let na = num_states as i64;
    let nb = num_measurements as i64;
    ProcessSpec::from_fn(num_states, num_measurements, 2, |a, b, s| {
        let (a, b) = (a as i64 + 1, b as i64 + 1);
        // 2πa/|A| − πb/|B| = π(2a|B| − b|A|)/(|A||B|)
        let inner = cos_pi_ratio::<T>(2 * a * nb - b * na, na * nb);
        qubit_row(inner)[s]
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Plane {
    Xy,
    Xz,
    Yz,
}

impl Plane {
    const ALL: [Plane; 3] = [Plane::Xy, Plane::Xz, Plane::Yz];

    fn axes(self) -> (usize, usize) {
        match self {
            Plane::Xy => (0, 1),
            Plane::Xz => (0, 2),
            Plane::Yz => (1, 2),
        }
    }
}

/// A direction on the sphere tracked by exact angle indices (units of `π/B₀`)
/// in every coordinate plane that contains it.
#[derive(Clone, Debug)]
struct Direction {
    reps: Vec<(Plane, i64)>,
}

impl Direction {
    fn vector<T: Real>(&self, half_count: i64) -> [T; 3] {
        let (plane, k) = self.reps[0];
        let (i, j) = plane.axes();
        let mut v = [T::zero(); 3];
        v[i] = cos_pi_ratio(k, half_count);
        v[j] = sin_pi_ratio(k, half_count);
        v
    }
}

/// Axis (0, 1, 2) and sign of an in-plane direction, if it lies on an axis.
fn axis_of(plane: Plane, k: i64, half_count: i64) -> Option<(usize, i64)> {
    let (i, j) = plane.axes();
    let k = k.rem_euclid(2 * half_count);
    if k % half_count == 0 {
        Some((i, if k == 0 { 1 } else { -1 }))
    } else if 2 * (k % half_count) == half_count {
        Some((j, if k == half_count / 2 { 1 } else { -1 }))
    } else {
        None
    }
}

/// Angle index of the signed axis direction inside `plane`.
fn axis_angle(plane: Plane, axis: usize, sign: i64, half_count: i64) -> Option<i64> {
    let (i, j) = plane.axes();
    if axis == i {
        Some(if sign > 0 { 0 } else { half_count })
    } else if axis == j {
        Some(if sign > 0 { half_count / 2 } else { 3 * half_count / 2 })
    } else {
        None
    }
}

/// Collects in-plane directions from all three planes, merging axis-aligned
/// duplicates. With `up_to_sign`, antipodal axis directions count as equal
/// (measurements); otherwise only identical directions merge (states).
fn merged_directions(half_count: i64, indices: impl Iterator<Item = i64> + Clone, up_to_sign: bool) -> Vec<Direction> {
    let mut seen_axes: Vec<(usize, i64)> = Vec::new();
    let mut dirs = Vec::new();
    for plane in Plane::ALL {
        for k in indices.clone() {
            match axis_of(plane, k, half_count) {
                None => dirs.push(Direction { reps: vec![(plane, k)] }),
                Some((axis, sign)) => {
                    let duplicate = seen_axes
                        .iter()
                        .any(|&(ax, sg)| ax == axis && (up_to_sign || sg == sign));
                    if duplicate {
                        continue;
                    }
                    seen_axes.push((axis, sign));
                    let reps = Plane::ALL
                        .iter()
                        .filter_map(|&p| axis_angle(p, axis, sign, half_count).map(|kk| (p, kk)))
                        .collect();
                    dirs.push(Direction { reps });
                }
            }
        }
    }
    dirs
}

fn direction_inner<T: Real>(v: &Direction, w: &Direction, half_count: i64) -> T {
    for &(pv, kv) in &v.reps {
        for &(pw, kw) in &w.reps {
            if pv == pw {
                return cos_pi_ratio(kv - kw, half_count);
            }
        }
    }
    let x: [T; 3] = v.vector(half_count);
    let y: [T; 3] = w.vector(half_count);
    x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
}

fn nonplanar_directions(half_plane_count: usize) -> Result<(i64, Vec<Direction>, Vec<Direction>)> {
    if half_plane_count < 2 || half_plane_count % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "non-planar problem needs an even measurement count per plane >= 2, got {half_plane_count}"
        )));
    }
    let b0 = half_plane_count as i64;
    // A₀ = 2B₀ states per plane at angles 2πa/A₀ = πa/B₀.
    let states = merged_directions(b0, 1..=2 * b0, false);
    let measurements = merged_directions(b0, 1..=b0, true);
    Ok((b0, states, measurements))
}

/// Bloch vectors of [`nonplanar_problem`].
pub fn nonplanar_config<T: Real>(half_plane_count: usize) -> Result<BlochConfig<T>> {
    let (b0, states, measurements) = nonplanar_directions(half_plane_count)?;
    BlochConfig::new(
        states.iter().map(|d| d.vector(b0)).collect(),
        measurements.iter().map(|d| d.vector(b0)).collect(),
    )
}

/// Planar configurations in the x–y, x–z and y–z planes with `2B₀` states and
/// `B₀` measurements per plane; shared axis vectors appear once, giving
/// `|A| = 6B₀ − 6` and `|B| = 3B₀ − 3`.
pub fn nonplanar_problem<T: Real>(half_plane_count: usize) -> Result<ProcessSpec<T>> {
    let (b0, states, measurements) = nonplanar_directions(half_plane_count)?;
    ProcessSpec::from_fn(states.len(), measurements.len(), 2, |a, b, s| {
        qubit_row(direction_inner::<T>(&states[a], &measurements[b], b0))[s]
    })
}
