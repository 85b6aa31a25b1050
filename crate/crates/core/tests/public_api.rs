use capmin::{
    planar_problem, solve, ProcessSpecF32, ProcessSpecF64, SolverConfigF32, SolverConfigF64, Termination,
};

#[test]
fn f32_and_f64_agree_on_a_small_planar_problem() {
    let wide: ProcessSpecF64 = planar_problem(4, 2).unwrap();
    let narrow: ProcessSpecF32 = planar_problem(4, 2).unwrap();
    let wide = solve(&wide, &SolverConfigF64::with_accuracy(1e-6)).unwrap();
    let narrow = solve(&narrow, &SolverConfigF32::with_accuracy(1e-3)).unwrap();
    assert_eq!(wide.termination, Termination::Converged);
    assert_eq!(narrow.termination, Termination::Converged);
    assert!((wide.value_bits - 1.0).abs() < 1e-5);
    assert!((narrow.value_bits as f64 - wide.value_bits).abs() < 2e-3);
}

#[test]
fn f32_certificate_brackets_its_value() {
    let spec: ProcessSpecF32 = planar_problem(6, 3).unwrap();
    let result = solve(&spec, &SolverConfigF32::with_accuracy(1e-3)).unwrap();
    let cert = result.certificate();
    assert!(cert.lower_bits <= cert.upper_bits);
    assert!(cert.gap_bits <= 1e-3);
}

#[test]
fn history_is_reported_every_round() {
    let spec: ProcessSpecF64 = planar_problem(6, 3).unwrap();
    let result = solve(&spec, &SolverConfigF64::with_accuracy(1e-7)).unwrap();
    assert_eq!(result.history.len(), result.iterations);
    for (i, cert) in result.history.iter().enumerate() {
        assert!(cert.lower_bits <= cert.upper_bits + 1e-12, "round {i}: {cert:?}");
    }
}
