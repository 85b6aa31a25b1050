//! On-disk artifacts: the run record and the bound-history CSV.

use std::io::Write;

use capmin::solver::{OptimalityReport, PhaseTimings};
use capmin::{Certificate, InputPrior, ProcessSpec, SolveResult, SolverConfig, Termination};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Which process a run was about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemDescriptor {
    /// Path the process was read from, if any.
    pub source: Option<String>,
    pub num_inputs: usize,
    pub num_measurements: usize,
    pub num_outcomes: usize,
}

impl ProblemDescriptor {
    pub fn of(spec: &ProcessSpec<f64>, source: Option<String>) -> Self {
        ProblemDescriptor {
            source,
            num_inputs: spec.num_inputs(),
            num_measurements: spec.num_measurements(),
            num_outcomes: spec.num_outcomes(),
        }
    }
}

/// Everything `solve` reports about one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub problem: ProblemDescriptor,
    pub config: SolverConfig<f64>,
    pub threads: usize,
    /// Final `C₊`, bits.
    pub value_bits: f64,
    pub lower_bits: f64,
    pub gap_bits: f64,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub prior: InputPrior<f64>,
    pub history: Vec<Certificate<f64>>,
    pub residuals: Option<OptimalityReport<f64>>,
    pub failure: Option<String>,
    pub timings: PhaseTimings,
    pub wall_seconds: f64,
    /// Sequences held in memory per round; the peak for the run.
    pub sequence_space_size: usize,
}

impl RunRecord {
    pub fn new(
        problem: ProblemDescriptor,
        config: SolverConfig<f64>,
        threads: usize,
        result: &SolveResult<f64>,
        wall_seconds: f64,
    ) -> Self {
        let cert = result.certificate();
        RunRecord {
            schema: SCHEMA_VERSION,
            problem,
            config,
            threads,
            value_bits: result.value_bits,
            lower_bits: cert.lower_bits,
            gap_bits: cert.gap_bits,
            converged: result.converged(),
            termination: result.termination,
            iterations: result.iterations,
            prior: result.prior.clone(),
            history: result.history.clone(),
            residuals: result.residuals,
            failure: result.failure.as_ref().map(|e| e.to_string()),
            timings: result.timings,
            wall_seconds,
            sequence_space_size: result.sequence_space_size,
        }
    }
}

/// One row of the bound-history CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub c_lower_bits: f64,
    pub c_upper_bits: f64,
    pub gap_bits: f64,
    pub seconds: f64,
}

impl From<&Certificate<f64>> for HistoryRow {
    fn from(c: &Certificate<f64>) -> Self {
        HistoryRow {
            iter: c.iteration,
            c_lower_bits: c.lower_bits,
            c_upper_bits: c.upper_bits,
            gap_bits: c.gap_bits,
            seconds: c.elapsed_seconds,
        }
    }
}

pub fn write_history<W: Write>(out: W, history: &[Certificate<f64>]) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for cert in history {
        writer.serialize(HistoryRow::from(cert))?;
    }
    writer.flush()?;
    Ok(())
}

/// One row of the bench CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub num_measurements: usize,
    /// Fastest of the repeats.
    pub seconds: f64,
    pub value_bits: f64,
    pub iterations: usize,
}
