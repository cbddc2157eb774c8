//! Maximum-likelihood decoding of the cell bit and the exact mean error
//! probability `½ Σ_n min_u p(n|τ_u)`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::bounds::classical_phc_threshold;
use crate::channel::{Bit, CellPair, Copies, DetectionModel, SourceKind, SourceSpec};
use crate::dist::{classical_joint_pmf, row_chunks, tmsv_joint_pmf, JointModel, JointPmf, JointRow, PoissonLimitJoint};
use crate::error::{Error, Result};
use crate::gaussian::GaussianModel;
use crate::numeric::pairwise_sum;

/// Default accuracy demanded of [`exact_error_probability`]: the truncated
/// tails may hide at most this much error probability.
pub const DEFAULT_ACCURACY: f64 = 1e-6;

/// One frame's photon counts. Counts can be negative once read noise is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Outcome {
    pub n_s: i64,
    pub n_i: i64,
}

impl Outcome {
    pub fn new(n_s: i64, n_i: i64) -> Self {
        Self { n_s, n_i }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub p0: f64,
    pub p1: f64,
    /// Both likelihoods were zero; the pair is the uninformative (½, ½).
    pub degenerate: bool,
}

/// Posterior probabilities of the two hypotheses under equal priors.
pub fn posterior(outcome: Outcome, model0: &JointPmf, model1: &JointPmf) -> Posterior {
    let l0 = model0.get(outcome.n_s, outcome.n_i);
    let l1 = model1.get(outcome.n_s, outcome.n_i);
    let total = l0 + l1;
    if total == 0.0 {
        return Posterior { p0: 0.5, p1: 0.5, degenerate: true };
    }
    Posterior { p0: l0 / total, p1: l1 / total, degenerate: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    FullLikelihood,
    QuantumThreshold,
    ClassicalThreshold,
    GaussianLikelihood,
}

/// A decoder for one cell pair. Constructors check that the rule is a
/// maximum-likelihood rule for the stated regime, so `decide` cannot fail.
#[derive(Debug, Clone)]
pub enum DecisionRule {
    /// Compares tabulated likelihoods (noise already folded into the tables).
    FullLikelihood { model0: Arc<JointPmf>, model1: Arc<JointPmf> },
    /// Signal threshold proportional to the idler count; ideal detection only.
    QuantumThreshold { tau0: f64, tau1: f64 },
    /// Single-arm count threshold for a coherent transmitter without read noise.
    ClassicalThreshold { n_th: f64 },
    /// Likelihood ratio of two normal approximations.
    GaussianLikelihood { model0: GaussianModel, model1: GaussianModel },
}

impl DecisionRule {
    pub fn full_likelihood(model0: Arc<JointPmf>, model1: Arc<JointPmf>) -> Self {
        Self::FullLikelihood { model0, model1 }
    }

    pub fn quantum_threshold(cell: &CellPair, detect: &DetectionModel) -> Result<Self> {
        detect.validate()?;
        if !detect.is_ideal() {
            return Err(Error::RegimeViolation(format!(
                "the idler-proportional threshold is derived for unit efficiency and no read noise \
                 (eta_s={}, eta_i={}, nu_e={})",
                detect.eta_s, detect.eta_i, detect.nu_e
            )));
        }
        Ok(Self::QuantumThreshold { tau0: cell.tau0(), tau1: cell.tau1() })
    }

    pub fn classical_threshold(energy: f64, cell: &CellPair, detect: &DetectionModel) -> Result<Self> {
        detect.validate()?;
        if detect.has_noise() {
            return Err(Error::RegimeViolation("the count threshold ignores read noise".into()));
        }
        let n_th = if cell.is_degenerate() || energy == 0.0 {
            f64::INFINITY
        } else {
            classical_phc_threshold(energy, cell, detect)?
        };
        Ok(Self::ClassicalThreshold { n_th })
    }

    pub fn gaussian_likelihood(model0: GaussianModel, model1: GaussianModel) -> Result<Self> {
        if model0.dim() != model1.dim() {
            return Err(Error::invalid("Gaussian models must have the same dimension"));
        }
        Ok(Self::GaussianLikelihood { model0, model1 })
    }

    /// The cheapest exact maximum-likelihood rule for the configuration:
    /// closed-form thresholds where they apply, tabulated likelihoods up to
    /// `gaussian_above` photons, and the normal approximation beyond.
    pub fn maximum_likelihood(
        source: &SourceSpec,
        cell: &CellPair,
        detect: &DetectionModel,
        trunc_tol: f64,
        gaussian_above: f64,
    ) -> Result<Self> {
        source.validate()?;
        detect.validate()?;
        match source.kind {
            SourceKind::Tmsv if detect.is_ideal() => Self::quantum_threshold(cell, detect),
            SourceKind::ClassicalPoisson if !detect.has_noise() => {
                Self::classical_threshold(source.energy, cell, detect)
            }
            _ if source.energy > gaussian_above => Self::gaussian_likelihood(
                GaussianModel::for_hypothesis(source, cell, Bit::Zero, detect)?,
                GaussianModel::for_hypothesis(source, cell, Bit::One, detect)?,
            ),
            _ => {
                let (m0, m1) = rayon::join(
                    || hypothesis_pmf(source, cell, Bit::Zero, detect, trunc_tol),
                    || hypothesis_pmf(source, cell, Bit::One, detect, trunc_tol),
                );
                Ok(Self::full_likelihood(Arc::new(m0?), Arc::new(m1?)))
            }
        }
    }

    pub fn kind(&self) -> RuleKind {
        match self {
            Self::FullLikelihood { .. } => RuleKind::FullLikelihood,
            Self::QuantumThreshold { .. } => RuleKind::QuantumThreshold,
            Self::ClassicalThreshold { .. } => RuleKind::ClassicalThreshold,
            Self::GaussianLikelihood { .. } => RuleKind::GaussianLikelihood,
        }
    }
}

pub trait Decide {
    /// Guessed bit; likelihood ties go to hypothesis 0.
    fn decide(&self, outcome: Outcome) -> Bit;
}

impl Decide for DecisionRule {
    fn decide(&self, o: Outcome) -> Bit {
        match self {
            Self::FullLikelihood { model0, model1 } => {
                if model0.get(o.n_s, o.n_i) >= model1.get(o.n_s, o.n_i) {
                    Bit::Zero
                } else {
                    Bit::One
                }
            }
            Self::QuantumThreshold { tau0, tau1 } => decide_quantum(*tau0, *tau1, o),
            Self::ClassicalThreshold { n_th } => {
                if (o.n_s as f64) <= *n_th {
                    Bit::Zero
                } else {
                    Bit::One
                }
            }
            Self::GaussianLikelihood { model0, model1 } => {
                let x = [o.n_s as f64, o.n_i as f64];
                if model0.ln_density(x) >= model1.ln_density(x) {
                    Bit::Zero
                } else {
                    Bit::One
                }
            }
        }
    }
}

pub fn decide(outcome: Outcome, rule: &DecisionRule) -> Bit {
    rule.decide(outcome)
}

/// Ideal-detection rule: `p(n|τ) = P(n_I) B(n_S | n_I, τ)`, so the likelihood
/// ratio only involves the binomial factor.
fn decide_quantum(tau0: f64, tau1: f64, o: Outcome) -> Bit {
    let (s, i) = (o.n_s, o.n_i);
    // outside the support of both hypotheses
    if s < 0 || i < 0 || s > i || tau0 == tau1 {
        return Bit::Zero;
    }
    if tau1 == 1.0 {
        // only the diagonal is possible under τ1, where the ratio is τ0^n ≤ 1
        return if s == i && s > 0 { Bit::One } else { Bit::Zero };
    }
    if tau0 == 0.0 {
        return if s == 0 { Bit::Zero } else { Bit::One };
    }
    let a = (tau1 / tau0).ln();
    let b = (-tau0).ln_1p() - (-tau1).ln_1p();
    if s as f64 * (a + b) <= i as f64 * b {
        Bit::Zero
    } else {
        Bit::One
    }
}

/// Real-valued signal threshold for a given idler count: outcomes with
/// `n_S ≤ n_S^th` decode to 0.
pub fn quantum_signal_threshold(cell: &CellPair, n_i: f64) -> f64 {
    let (t0, t1) = (cell.tau0(), cell.tau1());
    if t0 == 0.0 {
        return 0.0;
    }
    if t1 == 1.0 {
        return n_i;
    }
    let a = (t1 / t0).ln();
    let b = (-t0).ln_1p() - (-t1).ln_1p();
    n_i / (a / b + 1.0)
}

/// Error probability with a rigorous bound on the contribution of truncated tails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorProbability {
    /// Sum over the evaluated support; a lower bound on the true value.
    pub value: f64,
    /// The true value lies in `[value, value + uncertainty]`.
    pub uncertainty: f64,
}

fn row_overlap(r0: &JointRow, r1: &JointRow) -> f64 {
    if r0.probs.is_empty() || r1.probs.is_empty() {
        return 0.0;
    }
    let lo = r0.i_lo.max(r1.i_lo);
    let hi = r0.i_hi().min(r1.i_hi());
    if lo > hi {
        return 0.0;
    }
    let a = &r0.probs[(lo - r0.i_lo) as usize..=(hi - r0.i_lo) as usize];
    let b = &r1.probs[(lo - r1.i_lo) as usize..=(hi - r1.i_lo) as usize];
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

/// `½ Σ_n min(p0(n), p1(n))` with [`DEFAULT_ACCURACY`].
pub fn exact_error_probability<A, B>(model0: &A, model1: &B) -> Result<ErrorProbability>
where
    A: JointModel + ?Sized,
    B: JointModel + ?Sized,
{
    exact_error_probability_within(model0, model1, DEFAULT_ACCURACY)
}

/// As [`exact_error_probability`], failing if the tails could hide more than `accuracy`.
///
/// Only rows present in both models contribute: outside either support the
/// minimum is bounded by that model's tail mass. Rows are evaluated in fixed
/// chunks and reduced pairwise, so the result does not depend on the thread count.
pub fn exact_error_probability_within<A, B>(model0: &A, model1: &B, accuracy: f64) -> Result<ErrorProbability>
where
    A: JointModel + ?Sized,
    B: JointModel + ?Sized,
{
    let uncertainty = 0.5 * (model0.tail_mass() + model1.tail_mass());
    if uncertainty > accuracy {
        return Err(Error::TruncationFailure(format!(
            "truncated tails could hide {uncertainty:.3e} of error probability, above the requested {accuracy:.3e}"
        )));
    }
    let (lo0, hi0) = model0.s_range();
    let (lo1, hi1) = model1.s_range();
    let (lo, hi) = (lo0.max(lo1), hi0.min(hi1));
    let row_sums: Vec<f64> = row_chunks(lo, hi)
        .into_par_iter()
        .map(|(a, b)| {
            let r0 = model0.rows_in(a, b);
            let r1 = model1.rows_in(a, b);
            r0.iter().zip(&r1).map(|(x, y)| row_overlap(x, y)).collect::<Vec<f64>>()
        })
        .collect::<Vec<_>>()
        .concat();
    let value = (0.5 * pairwise_sum(&row_sums)).min(0.5);
    Ok(ErrorProbability { value, uncertainty })
}

/// Count model of one hypothesis in the form best suited to summation.
#[derive(Debug, Clone)]
pub enum HypothesisModel {
    Table(JointPmf),
    /// Noiseless Poisson-limit TMSV, evaluated row by row without storing it.
    PoissonLimit(PoissonLimitJoint),
}

impl JointModel for HypothesisModel {
    fn s_range(&self) -> (i64, i64) {
        match self {
            Self::Table(m) => m.s_range(),
            Self::PoissonLimit(m) => m.s_range(),
        }
    }

    fn row(&self, s: i64) -> JointRow {
        match self {
            Self::Table(m) => m.row(s),
            Self::PoissonLimit(m) => m.row(s),
        }
    }

    fn tail_mass(&self) -> f64 {
        match self {
            Self::Table(m) => JointModel::tail_mass(m),
            Self::PoissonLimit(m) => m.tail_mass(),
        }
    }

    fn entry_estimate(&self) -> usize {
        match self {
            Self::Table(m) => m.entry_estimate(),
            Self::PoissonLimit(m) => m.entry_estimate(),
        }
    }

    fn rows_in(&self, lo: i64, hi: i64) -> Vec<JointRow> {
        match self {
            Self::Table(m) => m.rows_in(lo, hi),
            Self::PoissonLimit(m) => m.rows_in(lo, hi),
        }
    }
}

/// Count model of hypothesis `u` (cell transmissivity `τ_u`).
pub fn hypothesis_model(
    source: &SourceSpec,
    cell: &CellPair,
    u: Bit,
    detect: &DetectionModel,
    trunc_tol: f64,
) -> Result<HypothesisModel> {
    let tau = cell.tau(u);
    match source.kind {
        SourceKind::ClassicalPoisson => classical_joint_pmf(source, tau, detect, trunc_tol).map(HypothesisModel::Table),
        SourceKind::Tmsv if source.copies == Copies::Infinite && !detect.has_noise() && source.energy > 0.0 => {
            source.validate()?;
            detect.validate()?;
            PoissonLimitJoint::new(source.energy, detect.eta_s * tau, detect.eta_i, trunc_tol)
                .map(HypothesisModel::PoissonLimit)
        }
        SourceKind::Tmsv => tmsv_joint_pmf(source, tau, detect, trunc_tol).map(HypothesisModel::Table),
    }
}

/// Materialized joint pmf of hypothesis `u`.
pub fn hypothesis_pmf(
    source: &SourceSpec,
    cell: &CellPair,
    u: Bit,
    detect: &DetectionModel,
    trunc_tol: f64,
) -> Result<JointPmf> {
    match hypothesis_model(source, cell, u, detect, trunc_tol)? {
        HypothesisModel::Table(m) => Ok(m),
        HypothesisModel::PoissonLimit(m) => JointPmf::from_model(&m),
    }
}

/// Exact error probability of photon-counting readout for a full configuration,
/// to within [`DEFAULT_ACCURACY`].
pub fn exact_error_probability_for(
    source: &SourceSpec,
    cell: &CellPair,
    detect: &DetectionModel,
    trunc_tol: f64,
) -> Result<ErrorProbability> {
    if cell.is_degenerate() {
        return Ok(ErrorProbability { value: 0.5, uncertainty: 0.0 });
    }
    let (m0, m1) = rayon::join(
        || hypothesis_model(source, cell, Bit::Zero, detect, trunc_tol),
        || hypothesis_model(source, cell, Bit::One, detect, trunc_tol),
    );
    exact_error_probability_within(&m0?, &m1?, DEFAULT_ACCURACY)
}
