use capmin::solver::{OptimalityReport, PhaseTimings};
use capmin::{Certificate, InputPrior, PriorMode, SolverConfig, Termination};
use capmin_cli::record::{ProblemDescriptor, RunRecord};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, Just(0.0), Just(1e-300), Just(f64::MAX), Just(f64::MIN_POSITIVE)]
}

fn certificate() -> impl Strategy<Value = Certificate<f64>> {
    (0usize..1000, finite(), finite(), finite(), 0.0..1e4f64).prop_map(|(iteration, lo, hi, gap, t)| Certificate {
        iteration,
        lower_bits: lo,
        upper_bits: hi,
        gap_bits: gap,
        elapsed_seconds: t,
    })
}

fn termination() -> impl Strategy<Value = Termination> {
    prop_oneof![
        Just(Termination::Converged),
        Just(Termination::IterationCap),
        Just(Termination::Stagnated),
        Just(Termination::NumericalFailure),
    ]
}

fn record() -> impl Strategy<Value = RunRecord> {
    (
        (1usize..6, 1usize..6, any::<bool>(), proptest::option::of("[a-z/._]{1,12}")),
        (finite(), finite(), finite(), any::<bool>(), termination(), 0usize..500),
        proptest::collection::vec(certificate(), 0..8),
        proptest::collection::vec(0.0..1.0f64, 1..5),
        proptest::option::of((finite(), finite(), finite(), finite())),
        proptest::option::of(".{0,20}"),
        (0.0..1e3f64, 0.0..1e3f64, 0.0..1e3f64, 0.0..1e4f64, 1usize..1 << 20, 1usize..64),
    )
        .prop_map(|(dims, summary, history, weights, residuals, failure, times)| {
            let (na, nb, fixed, source) = dims;
            let (value, lower, gap, converged, termination, iterations) = summary;
            let total: f64 = weights.iter().sum::<f64>().max(1e-9);
            let prior: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let prior = InputPrior::new(prior).unwrap_or_else(|_| InputPrior::uniform(weights.len()));
            let mut config = SolverConfig::<f64>::with_accuracy(1e-6);
            if fixed {
                config.prior = PriorMode::Fixed(prior.clone());
                config.memory_budget = Some(1 << 20);
            }
            RunRecord {
                schema: 1,
                problem: ProblemDescriptor { source, num_inputs: na, num_measurements: nb, num_outcomes: 2 },
                config,
                threads: times.5,
                value_bits: value,
                lower_bits: lower,
                gap_bits: gap,
                converged,
                termination,
                iterations,
                prior,
                history,
                residuals: residuals.map(|(a, b, c, d)| OptimalityReport {
                    f_excess: a,
                    slackness: b,
                    marginal_residual: c,
                    prior_residual: d,
                }),
                failure,
                timings: PhaseTimings { dual_seconds: times.0, capacity_seconds: times.1, sweep_seconds: times.2 },
                wall_seconds: times.3,
                sequence_space_size: times.4,
            }
        })
}

proptest! {
    #[test]
    fn run_record_survives_json(record in record()) {
        let text = serde_json::to_string(&record).unwrap();
        let back: RunRecord = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, record);
    }
}
