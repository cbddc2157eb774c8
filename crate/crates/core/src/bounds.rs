//! Classical benchmarks, binary entropy, information gain and the
//! mean-energy-discrimination boundary.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{effective_cell, CellPair, DetectionModel, SourceSpec};
use crate::error::{Error, Result};
use crate::special::gamma_pq;

/// Slack allowed above 1/2 for error probabilities coming out of numerics.
pub const HALF_SLACK: f64 = 1e-9;

/// Binary Shannon entropy in bits, with `H(0) = H(1) = 0`.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("entropy argument must lie in [0,1], got {p}")));
    }
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-(p * p.ln() + (1.0 - p) * (-p).ln_1p()) / LN_2)
}

/// `dH/dp` in bits.
pub(crate) fn binary_entropy_slope(p: f64) -> f64 {
    ((1.0 - p) / p).ln() / LN_2
}

fn check_error_probability(p: f64, what: &str) -> Result<f64> {
    if !(0.0..=0.5 + HALF_SLACK).contains(&p) {
        return Err(Error::invalid(format!("{what} must lie in [0, 1/2], got {p}")));
    }
    Ok(p.min(0.5))
}

fn check_energy(n: f64) -> Result<()> {
    if !(n >= 0.0) || !n.is_finite() {
        return Err(Error::invalid(format!("energy must be finite and ≥ 0, got {n}")));
    }
    Ok(())
}

/// Information gain of the quantum strategy over a classical benchmark,
/// `H(p_c) − H(p_q)` bits per cell.
pub fn gain(p_err_q: f64, p_err_c: f64) -> Result<f64> {
    let q = check_error_probability(p_err_q, "quantum error probability")?;
    let c = check_error_probability(p_err_c, "classical error probability")?;
    Ok(binary_entropy(c)? - binary_entropy(q)?)
}

/// Minimum error probability over all classical (positive-P) transmitters of
/// energy `N`: `[1 − √(1 − e^{−N(√τ1−√τ0)²})]/2` on the effective cell.
///
/// Evaluated as `e^{−E} / (2(1 + √(−expm1(−E))))`, which has no cancellation
/// at either end of the exponent range.
pub fn classical_optimal_bound(n: f64, cell: &CellPair, detect: &DetectionModel) -> Result<f64> {
    check_energy(n)?;
    detect.validate()?;
    let eff = effective_cell(cell, detect);
    let (t0, t1) = (eff.tau0(), eff.tau1());
    if t0 == t1 || n == 0.0 {
        return Ok(0.5);
    }
    // (√τ1 − √τ0)² = (τ1 − τ0)² / (√τ1 + √τ0)²
    let gap = (t1 - t0) / (t1.sqrt() + t0.sqrt());
    let exponent = n * gap * gap;
    let y = (-exponent).exp();
    Ok(y / (2.0 * (1.0 + (-(-exponent).exp_m1()).sqrt())))
}

/// Count threshold of the classical photon-counting receiver,
/// `n^th = N(τ1 − τ0)/ln(τ1/τ0)` on the effective cell: counts `n ≤ n^th`
/// decode to bit 0.
pub fn classical_phc_threshold(n: f64, cell: &CellPair, detect: &DetectionModel) -> Result<f64> {
    check_energy(n)?;
    detect.validate()?;
    let eff = effective_cell(cell, detect);
    let (t0, t1) = (eff.tau0(), eff.tau1());
    if t0 == t1 {
        return Err(Error::invalid("threshold is undefined for identical channels"));
    }
    if t0 == 0.0 {
        return Ok(0.0);
    }
    let x = (t1 - t0) / t0;
    // x / ln(1+x), with its series near x = 0 (limit N·τ)
    let ratio = if x < 1e-6 { 1.0 + x / 2.0 - x * x / 12.0 } else { x / x.ln_1p() };
    Ok(n * t0 * ratio)
}

/// Error probability of the classical photon-counting receiver with a
/// single-mode coherent transmitter,
/// `½[1 − (Γ(k+1, Nτ0) − Γ(k+1, Nτ1))/k!]` with `k = ⌊n^th⌋`.
///
/// Written through the regularized functions as `½[P(k+1, Nτ0) + Q(k+1, Nτ1)]`,
/// where each term is an error mass of one hypothesis and neither is formed by
/// subtraction.
pub fn classical_phc_bound(n: f64, cell: &CellPair, detect: &DetectionModel) -> Result<f64> {
    check_energy(n)?;
    detect.validate()?;
    let eff = effective_cell(cell, detect);
    let (t0, t1) = (eff.tau0(), eff.tau1());
    if t0 == t1 || n == 0.0 {
        return Ok(0.5);
    }
    if t0 == 0.0 {
        return Ok(0.5 * (-n * t1).exp());
    }
    let k = classical_phc_threshold(n, cell, detect)?.floor();
    let (miss0, _) = gamma_pq(k + 1.0, n * t0)?;
    let (_, miss1) = gamma_pq(k + 1.0, n * t1)?;
    Ok(0.5 * (miss0 + miss1))
}

/// Transmissivity `τ0 = 1 − 1/N` beyond which mean-energy discrimination fails.
pub fn med_boundary(n: f64) -> Result<f64> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid(format!("MED boundary needs N > 0, got {n}")));
    }
    Ok((1.0 - 1.0 / n).clamp(0.0, 1.0))
}

/// Error probabilities and gains at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRecord {
    pub cell: CellPair,
    pub source: SourceSpec,
    pub detect: DetectionModel,
    pub p_err_quantum: f64,
    pub p_err_classical_opt: f64,
    pub p_err_classical_phc: f64,
    pub gain_vs_opt: f64,
    pub gain_vs_phc: f64,
    /// One standard deviation on the gains; zero for analytic entries.
    pub uncertainty: f64,
}

impl GainRecord {
    /// Builds a record from the quantum error probability, evaluating both classical benchmarks.
    pub fn new(
        cell: CellPair,
        source: SourceSpec,
        detect: DetectionModel,
        p_err_quantum: f64,
        uncertainty: f64,
    ) -> Result<Self> {
        let n = source.energy;
        let p_opt = classical_optimal_bound(n, &cell, &detect)?;
        let p_phc = classical_phc_bound(n, &cell, &detect)?;
        let p_q = check_error_probability(p_err_quantum, "quantum error probability")?;
        Ok(Self {
            cell,
            source,
            detect,
            p_err_quantum: p_q,
            p_err_classical_opt: p_opt,
            p_err_classical_phc: p_phc,
            gain_vs_opt: gain(p_q, p_opt)?,
            gain_vs_phc: gain(p_q, p_phc)?,
            uncertainty,
        })
    }
}
