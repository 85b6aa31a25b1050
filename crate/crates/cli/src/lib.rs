//! Command-line front end: process generation, solving, the reference
//! oracle, and the scaling benchmark.
//!
//! [`run`] returns the process exit code: 0 on success, 1 for usage or I/O
//! errors, 2 for invalid input and 3 for numerical failure. Diagnostics go
//! to standard error.

pub mod error;
pub mod record;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use capmin::capacity::blahut_arimoto;
use capmin::model::validate_process;
use capmin::{
    brute_force_complexity, nonplanar_problem, planar_problem, solve, CapacityMode, ChannelMatrix, InputPrior,
    PriorMode, ProcessSpec, SolverConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use error::{CliError, EXIT_NUMERICAL, EXIT_USAGE, EXIT_VALIDATION};
use record::{write_history, BenchRow, ProblemDescriptor, RunRecord, SCHEMA_VERSION};

/// Overrides the sequence-space budget (number of table entries).
pub const MEMORY_BUDGET_ENV: &str = "CAPMIN_MEMORY_BUDGET";

#[derive(Debug, Parser)]
#[command(name = "capmin", version, about = "Asymptotic communication cost by capacity minimization")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a generated process as JSON.
    Generate {
        #[command(subcommand)]
        family: Family,
    },
    /// Solve a process and write a run record and bound history.
    Solve(SolveArgs),
    /// Capacity of a channel file `{num_inputs, num_outputs, prob}`.
    Capacity {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Brute-force reference value for a small process.
    Oracle {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Time the solver across sizes of a problem family.
    Bench {
        #[command(subcommand)]
        family: BenchFamily,
    },
}

#[derive(Debug, Subcommand)]
enum Family {
    /// Equally spaced states and measurements on a great circle.
    Planar { num_states: usize, num_measurements: usize, out: PathBuf },
    /// Merged rotated planar sets on the sphere.
    Nonplanar { half_plane_count: usize, out: PathBuf },
}

#[derive(Debug, Subcommand)]
enum BenchFamily {
    /// `planar(2|B|, |B|)` with the uniform prior.
    Planar(BenchArgs),
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 3)]
    bmin: usize,
    #[arg(long, default_value_t = 8)]
    bmax: usize,
    #[arg(long, default_value_t = 1e-6)]
    xi: f64,
    /// Runs per size; the fastest is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// CSV destination; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    file: PathBuf,
    /// Target gap `C₊ − C₋`, bits.
    #[arg(long, default_value_t = 1e-6)]
    xi: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = PriorArg::Opt)]
    prior: PriorArg,
    #[arg(long, value_enum, default_value_t = CapacityArg::Quad)]
    capacity: CapacityArg,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    /// Run record path; defaults to `<file stem>.run.json` beside the input.
    #[arg(long)]
    out: Option<PathBuf>,
    /// History CSV path; defaults to `<file stem>.history.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PriorArg {
    /// Uniform prior, held fixed.
    Fixed,
    /// Optimize the prior every round.
    Opt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CapacityArg {
    Quad,
    Exact,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Generate { family } => generate(family),
        Command::Solve(args) => solve_file(args, threads),
        Command::Capacity { file, tol } => capacity_file(&file, tol),
        Command::Oracle { file, tol } => oracle_file(&file, tol),
        Command::Bench { family: BenchFamily::Planar(args) } => bench_planar(args),
    })
}

fn generate(family: Family) -> Result<(), CliError> {
    let (spec, out) = match family {
        Family::Planar { num_states, num_measurements, out } => {
            (planar_problem::<f64>(num_states, num_measurements)?, out)
        }
        Family::Nonplanar { half_plane_count, out } => (nonplanar_problem::<f64>(half_plane_count)?, out),
    };
    write_json(&out, &spec)
}

fn solve_file(args: SolveArgs, threads: usize) -> Result<(), CliError> {
    let spec = read_process(&args.file)?;
    validate_process(&spec).into_result()?;
    let config = SolverConfig {
        max_iterations: args.max_iter,
        alpha: args.alpha,
        prior: match args.prior {
            PriorArg::Fixed => PriorMode::Fixed(InputPrior::uniform(spec.num_inputs())),
            PriorArg::Opt => PriorMode::Optimize,
        },
        capacity: match args.capacity {
            CapacityArg::Quad => CapacityMode::Quadratic,
            CapacityArg::Exact => CapacityMode::Exact,
        },
        memory_budget: memory_budget()?,
        ..SolverConfig::with_accuracy(args.xi)
    };

    let start = Instant::now();
    let result = solve(&spec, &config)?;
    let wall = start.elapsed().as_secs_f64();

    let problem = ProblemDescriptor::of(&spec, Some(args.file.display().to_string()));
    let record = RunRecord::new(problem, config, threads, &result, wall);
    let out = args.out.unwrap_or_else(|| sibling(&args.file, "run.json"));
    let csv_path = args.csv.unwrap_or_else(|| sibling(&args.file, "history.csv"));
    write_json(&out, &record)?;
    write_history(create(&csv_path)?, &result.history)?;

    eprintln!(
        "{}: {:.9} bits (gap {:.3e}) after {} rounds, {:?}",
        args.file.display(),
        record.value_bits,
        record.gap_bits,
        record.iterations,
        record.termination
    );
    match result.failure {
        Some(e) => Err(CliError::Stopped(e.to_string())),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct CapacityReport<'a> {
    schema: u32,
    capacity_bits: f64,
    upper_bits: f64,
    prior: &'a [f64],
    iterations: usize,
}

fn capacity_file(path: &Path, tol: f64) -> Result<(), CliError> {
    let raw: ChannelMatrix<f64> = read_json(path)?;
    let channel = ChannelMatrix::new(raw.num_inputs, raw.num_outputs, raw.prob)?;
    let est = blahut_arimoto(&channel, tol)?;
    print_json(&CapacityReport {
        schema: SCHEMA_VERSION,
        capacity_bits: est.capacity_bits,
        upper_bits: est.upper_bits,
        prior: est.prior.as_slice(),
        iterations: est.iterations,
    })
}

#[derive(Serialize)]
struct OracleReport {
    schema: u32,
    value_bits: f64,
    lower_bits: f64,
    spread_bits: f64,
    certified_restarts: usize,
}

fn oracle_file(path: &Path, tol: f64) -> Result<(), CliError> {
    let spec = read_process(path)?;
    let est = brute_force_complexity(&spec, tol)?;
    print_json(&OracleReport {
        schema: SCHEMA_VERSION,
        value_bits: est.value_bits,
        lower_bits: est.lower_bits,
        spread_bits: est.spread_bits,
        certified_restarts: est.certified_restarts,
    })
}

/// Solves `planar(2|B|, |B|)` with the fixed uniform prior for each `|B|` in
/// range and reports the fastest of `repeats` runs.
pub fn bench_rows(bmin: usize, bmax: usize, xi: f64, repeats: usize) -> Result<Vec<BenchRow>, CliError> {
    if bmin == 0 || bmin > bmax {
        return Err(CliError::Usage(format!("need 1 <= bmin <= bmax, got {bmin}..{bmax}")));
    }
    if repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let budget = memory_budget()?;
    let mut rows = Vec::new();
    for nb in bmin..=bmax {
        let spec = planar_problem::<f64>(2 * nb, nb)?;
        let config = SolverConfig { memory_budget: budget, ..SolverConfig::with_accuracy(xi).uniform_prior(2 * nb) };
        let mut best: Option<BenchRow> = None;
        for _ in 0..repeats {
            let start = Instant::now();
            let result = solve(&spec, &config)?;
            let seconds = start.elapsed().as_secs_f64();
            if let Some(e) = result.failure {
                return Err(CliError::Stopped(e.to_string()));
            }
            if best.map_or(true, |b| seconds < b.seconds) {
                best = Some(BenchRow {
                    num_measurements: nb,
                    seconds,
                    value_bits: result.value_bits,
                    iterations: result.iterations,
                });
            }
        }
        rows.extend(best);
    }
    Ok(rows)
}

fn bench_planar(args: BenchArgs) -> Result<(), CliError> {
    let rows = bench_rows(args.bmin, args.bmax, args.xi, args.repeats)?;
    let sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut writer = csv::Writer::from_writer(sink);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn memory_budget() -> Result<Option<u64>, CliError> {
    match std::env::var(MEMORY_BUDGET_ENV) {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|e| CliError::Invalid(format!("{MEMORY_BUDGET_ENV}={raw:?}: {e}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Invalid(format!("{MEMORY_BUDGET_ENV}: {e}"))),
    }
}

/// `dir/stem.<suffix>` for an input `dir/stem.ext`.
fn sibling(input: &Path, suffix: &str) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    input.with_file_name(format!("{stem}.{suffix}"))
}

pub fn read_process(path: &Path) -> Result<ProcessSpec<f64>, CliError> {
    read_json(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse { path: path.into(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let io_err = |source| CliError::Io { path: path.into(), source };
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_err(e.into()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(io_err)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    println!("{text}");
    Ok(())
}
