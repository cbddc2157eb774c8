//! Cross-checks between independent evaluation routes, run by `qread validate`.

use crate::bounds::{classical_optimal_bound, classical_phc_bound};
use crate::channel::{Bit, CellPair, DetectionModel, SourceSpec};
use crate::decision::{exact_error_probability_for, exact_error_probability_within, hypothesis_model, DecisionRule};
use crate::error::Result;
use crate::gaussian::gaussian_error_probability_for;
use crate::simulate::monte_carlo_error;
use crate::special::{gamma_q, ln_poisson_pmf};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> Check {
    match outcome {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

/// Incomplete gamma against a direct Poisson partial sum.
fn incomplete_gamma_vs_poisson_sum() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (k, x) in [(5_u32, 3.0), (40, 55.0), (300, 280.0), (499, 510.0)] {
        let direct: f64 = (0..=k).map(|n| ln_poisson_pmf(f64::from(n), x).exp()).sum();
        // P(Poisson(x) ≤ k) = Q(k + 1, x)
        let q = gamma_q(f64::from(k) + 1.0, x)?;
        worst = worst.max((q - direct).abs());
    }
    Ok((worst < 1e-12, format!("max |Q - Σ pmf| = {worst:.2e}")))
}

fn classical_closed_form_vs_summation() -> Result<(bool, String)> {
    let d = DetectionModel::ideal();
    let mut worst: f64 = 0.0;
    for (n, t0, t1) in [(20.0, 0.25, 1.0), (120.0, 0.6, 0.9), (500.0, 0.9, 0.97), (3.0, 0.0, 0.5)] {
        let cell = CellPair::new(t0, t1)?;
        let sum = exact_error_probability_for(&SourceSpec::classical(n)?, &cell, &d, 1e-14)?.value;
        worst = worst.max((sum - classical_phc_bound(n, &cell, &d)?).abs());
    }
    Ok((worst < 1e-9, format!("max deviation {worst:.2e}")))
}

fn quantum_unit_transmissivity_closed_form() -> Result<(bool, String)> {
    let d = DetectionModel::ideal();
    let mut worst: f64 = 0.0;
    for (n, t0) in [(5.0, 0.5), (10.0, 0.8), (50.0, 0.95)] {
        let src = SourceSpec::tmsv_poisson_limit(n)?;
        let cell = CellPair::new(t0, 1.0)?;
        let m0 = hypothesis_model(&src, &cell, Bit::Zero, &d, 1e-30)?;
        let m1 = hypothesis_model(&src, &cell, Bit::One, &d, 1e-30)?;
        let p = exact_error_probability_within(&m0, &m1, 1e-20)?.value;
        let closed = 0.5 * (-n * (1.0 - t0)).exp();
        worst = worst.max(((p - closed) / closed).abs());
    }
    Ok((worst < 1e-8, format!("max relative deviation {worst:.2e}")))
}

fn optimal_below_counting() -> Result<(bool, String)> {
    let d = DetectionModel::ideal();
    let mut ok = true;
    for n in [1.0, 10.0, 100.0] {
        for (t0, t1) in [(0.1, 0.5), (0.5, 1.0), (0.9, 0.95)] {
            let cell = CellPair::new(t0, t1)?;
            ok &= classical_optimal_bound(n, &cell, &d)? <= classical_phc_bound(n, &cell, &d)? + 1e-15;
        }
    }
    Ok((ok, "optimal classical bound ≤ photon-counting bound on a 3×3 grid".into()))
}

fn gaussian_vs_exact() -> Result<(bool, String)> {
    let src = SourceSpec::classical(200.0)?;
    let cell = CellPair::new(0.5, 1.0)?;
    let d = DetectionModel::ideal();
    let exact = exact_error_probability_for(&src, &cell, &d, 1e-14)?.value;
    let approx = gaussian_error_probability_for(&src, &cell, &d)?;
    let rel = ((approx - exact) / exact).abs();
    Ok((rel < 0.02, format!("N=200 single-arm: normal {approx:.6e} vs exact {exact:.6e} ({:.2}%)", 100.0 * rel)))
}

fn monte_carlo_vs_exact() -> Result<(bool, String)> {
    let src = SourceSpec::tmsv_poisson_limit(10.0)?;
    let cell = CellPair::new(0.8, 1.0)?;
    let d = DetectionModel::ideal();
    let rule = DecisionRule::quantum_threshold(&cell, &d)?;
    let est = monte_carlo_error(&src, &cell, &d, &rule, 100_000, 1)?;
    let exact = 0.5 * (-2.0_f64).exp();
    let z = (est.p_hat - exact) / est.stderr;
    Ok((z.abs() < 4.0, format!("p_hat {:.5} vs {exact:.5} ({z:+.2} standard errors)", est.p_hat)))
}

/// Runs every cross-check; each one is independent of the others.
pub fn run_all() -> Vec<Check> {
    vec![
        check("incomplete gamma vs Poisson sum", incomplete_gamma_vs_poisson_sum()),
        check("classical closed form vs summation", classical_closed_form_vs_summation()),
        check("unit transmissivity closed form", quantum_unit_transmissivity_closed_form()),
        check("optimal classical bound below counting bound", optimal_below_counting()),
        check("normal approximation vs summation", gaussian_vs_exact()),
        check("Monte Carlo vs exact", monte_carlo_vs_exact()),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
