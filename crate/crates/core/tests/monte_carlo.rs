use qread_core::decision::{exact_error_probability_for, DecisionRule};
use qread_core::simulate::monte_carlo_error;
use qread_core::{CellPair, DetectionModel, SourceSpec};

#[test]
fn estimates_cover_the_exact_value() {
    let source = SourceSpec::tmsv_poisson_limit(8.0).unwrap();
    let cell = CellPair::new(0.7, 0.95).unwrap();
    let detect = DetectionModel::lossy(0.8).unwrap();
    let exact = exact_error_probability_for(&source, &cell, &detect, 1e-12).unwrap().value;
    let rule = DecisionRule::maximum_likelihood(&source, &cell, &detect, 1e-12, 1e4).unwrap();
    let inside = (0..100)
        .filter(|&seed| {
            let est = monte_carlo_error(&source, &cell, &detect, &rule, 4000, seed).unwrap();
            (est.p_hat - exact).abs() <= 4.0 * est.stderr
        })
        .count();
    assert!(inside >= 95, "{inside}/100 trials within 4 standard errors of {exact}");
}

#[test]
fn standard_error_shrinks_as_inverse_root_frames() {
    let source = SourceSpec::tmsv_poisson_limit(10.0).unwrap();
    let cell = CellPair::new(0.8, 1.0).unwrap();
    let detect = DetectionModel::ideal();
    let rule = DecisionRule::quantum_threshold(&cell, &detect).unwrap();
    let small = monte_carlo_error(&source, &cell, &detect, &rule, 10_000, 3).unwrap();
    let large = monte_carlo_error(&source, &cell, &detect, &rule, 160_000, 3).unwrap();
    let ratio = small.stderr / large.stderr;
    assert!((ratio - 4.0).abs() < 0.3, "stderr ratio {ratio} for 16× the frames");
    assert!(large.ci_low <= large.p_hat && large.p_hat <= large.ci_high);
}

#[test]
fn classical_source_matches_counting_bound() {
    let source = SourceSpec::classical(30.0).unwrap();
    let cell = CellPair::new(0.6, 0.9).unwrap();
    let detect = DetectionModel::ideal();
    let exact = exact_error_probability_for(&source, &cell, &detect, 1e-12).unwrap().value;
    let rule = DecisionRule::maximum_likelihood(&source, &cell, &detect, 1e-12, 1e4).unwrap();
    let est = monte_carlo_error(&source, &cell, &detect, &rule, 50_000, 9).unwrap();
    assert!((est.p_hat - exact).abs() <= 4.0 * est.stderr, "{} vs {exact}", est.p_hat);
}
