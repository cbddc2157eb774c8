//! Memory-cell channels, detector efficiency and electronic noise.

use serde::{Deserialize, Serialize};

use crate::dist::{convolve, PhotonPmf, DEFAULT_TRUNC_TOL};
use crate::error::{Error, Result};
use crate::special::normal_sf;

/// The stored bit `u`, selecting channel `τ_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bit {
    Zero,
    One,
}

impl Bit {
    pub fn index(self) -> usize {
        match self {
            Bit::Zero => 0,
            Bit::One => 1,
        }
    }

    pub fn flip(self) -> Bit {
        match self {
            Bit::Zero => Bit::One,
            Bit::One => Bit::Zero,
        }
    }
}

impl From<Bit> for u8 {
    fn from(b: Bit) -> u8 {
        b.index() as u8
    }
}

/// A memory cell: two equiprobable pure-loss channels with `τ0 ≤ τ1`.
///
/// `τ0 == τ1` is accepted as the degenerate (indistinguishable) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellPair {
    tau0: f64,
    tau1: f64,
}

impl CellPair {
    pub fn new(tau0: f64, tau1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau0) || !(0.0..=1.0).contains(&tau1) {
            return Err(Error::invalid(format!("transmissivities must lie in [0,1] (τ0={tau0}, τ1={tau1})")));
        }
        if tau0 > tau1 {
            return Err(Error::invalid(format!("expected τ0 ≤ τ1, got τ0={tau0}, τ1={tau1}")));
        }
        Ok(Self { tau0, tau1 })
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn tau(&self, u: Bit) -> f64 {
        match u {
            Bit::Zero => self.tau0,
            Bit::One => self.tau1,
        }
    }

    /// Channels are equiprobable.
    pub fn prior(&self, _u: Bit) -> f64 {
        0.5
    }

    pub fn is_degenerate(&self) -> bool {
        self.tau0 == self.tau1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    #[default]
    GaussianAdditive,
    PoissonDark,
}

/// Detection efficiencies of the two arms and the electronic-noise level.
///
/// `nu_e` is the per-arm noise variance in counts² per frame; for
/// [`NoiseKind::PoissonDark`] it is the mean dark count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub eta_s: f64,
    pub eta_i: f64,
    pub nu_e: f64,
    #[serde(default)]
    pub noise_kind: NoiseKind,
}

impl DetectionModel {
    pub fn new(eta_s: f64, eta_i: f64, nu_e: f64, noise_kind: NoiseKind) -> Result<Self> {
        let d = Self { eta_s, eta_i, nu_e, noise_kind };
        d.validate()?;
        Ok(d)
    }

    /// Unit efficiency on both arms, no electronic noise.
    pub fn ideal() -> Self {
        Self { eta_s: 1.0, eta_i: 1.0, nu_e: 0.0, noise_kind: NoiseKind::None }
    }

    /// Noiseless detection with equal efficiency `eta` on both arms.
    pub fn lossy(eta: f64) -> Result<Self> {
        Self::new(eta, eta, 0.0, NoiseKind::None)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta_s) || !(0.0..=1.0).contains(&self.eta_i) {
            return Err(Error::invalid(format!(
                "efficiencies must lie in [0,1] (η_S={}, η_I={})",
                self.eta_s, self.eta_i
            )));
        }
        if !(self.nu_e >= 0.0) || !self.nu_e.is_finite() {
            return Err(Error::invalid(format!("ν_e must be finite and ≥ 0, got {}", self.nu_e)));
        }
        Ok(())
    }

    pub fn has_noise(&self) -> bool {
        self.noise_kind != NoiseKind::None && self.nu_e > 0.0
    }

    pub fn is_ideal(&self) -> bool {
        self.eta_s == 1.0 && self.eta_i == 1.0 && !self.has_noise()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ClassicalPoisson,
    Tmsv,
}

/// Number of signal-idler copies in the transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Copies {
    Finite(u64),
    /// `M → ∞` at fixed energy: Poissonian marginals.
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Total mean photon number irradiated on the cell.
    pub energy: f64,
    pub copies: Copies,
}

impl SourceSpec {
    /// Single-mode coherent transmitter (`M = 1`, no idlers).
    pub fn classical(energy: f64) -> Result<Self> {
        let s = Self { kind: SourceKind::ClassicalPoisson, energy, copies: Copies::Finite(1) };
        s.validate()?;
        Ok(s)
    }

    pub fn tmsv(energy: f64, copies: Copies) -> Result<Self> {
        let s = Self { kind: SourceKind::Tmsv, energy, copies };
        s.validate()?;
        Ok(s)
    }

    pub fn tmsv_poisson_limit(energy: f64) -> Result<Self> {
        Self::tmsv(energy, Copies::Infinite)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy >= 0.0) || !self.energy.is_finite() {
            return Err(Error::invalid(format!("source energy must be finite and ≥ 0, got {}", self.energy)));
        }
        if self.copies == Copies::Finite(0) {
            return Err(Error::invalid("copy count M must be ≥ 1"));
        }
        Ok(())
    }

    /// Mean photons per mode, `N / M` (zero in the Poisson limit).
    pub fn photons_per_mode(&self) -> f64 {
        match (self.kind, self.copies) {
            (SourceKind::ClassicalPoisson, _) => self.energy,
            (SourceKind::Tmsv, Copies::Finite(m)) => self.energy / m as f64,
            (SourceKind::Tmsv, Copies::Infinite) => 0.0,
        }
    }
}

/// Overall signal-arm transmissivity `η_S · τ_u` seen by the detector.
pub fn effective_transmissivity(cell: &CellPair, detect: &DetectionModel, u: Bit) -> f64 {
    detect.eta_s * cell.tau(u)
}

/// Cell pair with both channels rescaled by the signal efficiency.
pub fn effective_cell(cell: &CellPair, detect: &DetectionModel) -> CellPair {
    CellPair {
        tau0: effective_transmissivity(cell, detect, Bit::Zero),
        tau1: effective_transmissivity(cell, detect, Bit::One),
    }
}

/// Integer-valued noise added to each arm's count, as a pmf.
///
/// The Gaussian model is the rounded normal, `P(k) = Φ((k+½)/σ) − Φ((k−½)/σ)`,
/// which is exactly what `round(σZ)` samples.
pub fn noise_kernel(detect: &DetectionModel, trunc_tol: f64) -> Result<Option<PhotonPmf>> {
    detect.validate()?;
    if !detect.has_noise() {
        return Ok(None);
    }
    match detect.noise_kind {
        NoiseKind::None => Ok(None),
        NoiseKind::PoissonDark => PhotonPmf::poisson(detect.nu_e, trunc_tol).map(Some),
        NoiseKind::GaussianAdditive => rounded_gaussian(detect.nu_e, trunc_tol).map(Some),
    }
}

fn rounded_gaussian(variance: f64, trunc_tol: f64) -> Result<PhotonPmf> {
    if !(trunc_tol > 0.0 && trunc_tol < 1.0) {
        return Err(Error::invalid(format!("truncation tolerance must lie in (0,1), got {trunc_tol}")));
    }
    let sigma = variance.sqrt();
    // both tails beyond ±w: 2·Φc((w+½)/σ)
    let mut half = 0_i64;
    while 2.0 * normal_sf((half as f64 + 0.5) / sigma) > trunc_tol {
        half += 1;
    }
    let mut probs = Vec::with_capacity(2 * half as usize + 1);
    for k in -half..=half {
        let a = (k.unsigned_abs() as f64 - 0.5) / sigma;
        let b = (k.unsigned_abs() as f64 + 0.5) / sigma;
        let p = if k == 0 { 1.0 - 2.0 * normal_sf(b) } else { normal_sf(a) - normal_sf(b) };
        probs.push(p);
    }
    let tail = 2.0 * normal_sf((half as f64 + 0.5) / sigma);
    PhotonPmf::from_parts(-half, probs, tail)
}

/// Mean and variance of the per-arm noise.
pub fn noise_moments(detect: &DetectionModel) -> Result<(f64, f64)> {
    match noise_kernel(detect, 1e-15)? {
        None => Ok((0.0, 0.0)),
        Some(k) => Ok((k.mean(), k.variance())),
    }
}

/// Convolves a count pmf with the detector's electronic noise.
pub fn apply_noise(pmf: &PhotonPmf, detect: &DetectionModel) -> Result<PhotonPmf> {
    apply_noise_tol(pmf, detect, DEFAULT_TRUNC_TOL)
}

pub fn apply_noise_tol(pmf: &PhotonPmf, detect: &DetectionModel, trunc_tol: f64) -> Result<PhotonPmf> {
    match noise_kernel(detect, trunc_tol)? {
        None => Ok(pmf.clone()),
        Some(kernel) => convolve(pmf, &kernel),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::binomial_thin;

    #[test]
    fn effective_transmissivity_examples() {
        let cell = CellPair::new(0.5, 1.0).unwrap();
        assert_eq!(effective_transmissivity(&cell, &DetectionModel::ideal(), Bit::One), 1.0);
        let d = DetectionModel::new(0.78, 0.77, 0.0, NoiseKind::None).unwrap();
        let c = CellPair::new(0.996, 1.0).unwrap();
        assert!((effective_transmissivity(&c, &d, Bit::Zero) - 0.77688).abs() < 1e-15);
        let d = DetectionModel::lossy(0.76).unwrap();
        assert!((effective_transmissivity(&cell, &d, Bit::Zero) - 0.38).abs() < 1e-15);
    }

    #[test]
    fn effective_transmissivity_is_monotone() {
        let grid = [0.0, 0.1, 0.4, 0.7, 1.0];
        for w in grid.windows(2) {
            for &eta in &grid {
                let d = DetectionModel::lossy(eta).unwrap();
                let lo = effective_transmissivity(&CellPair::new(w[0], 1.0).unwrap(), &d, Bit::Zero);
                let hi = effective_transmissivity(&CellPair::new(w[1], 1.0).unwrap(), &d, Bit::Zero);
                assert!(lo <= hi);
                let c = CellPair::new(eta, 1.0).unwrap();
                let lo = effective_transmissivity(&c, &DetectionModel::lossy(w[0]).unwrap(), Bit::Zero);
                let hi = effective_transmissivity(&c, &DetectionModel::lossy(w[1]).unwrap(), Bit::Zero);
                assert!(lo <= hi);
            }
        }
    }

    #[test]
    fn cell_pair_rejects_bad_order() {
        assert!(CellPair::new(0.9, 0.5).is_err());
        assert!(CellPair::new(-0.1, 0.5).is_err());
        assert!(CellPair::new(0.5, 1.5).is_err());
        assert!(CellPair::new(0.5, 0.5).unwrap().is_degenerate());
    }

    #[test]
    fn detection_model_validation() {
        assert!(DetectionModel::new(1.1, 1.0, 0.0, NoiseKind::None).is_err());
        assert!(DetectionModel::new(1.0, 1.0, -1.0, NoiseKind::None).is_err());
        assert!(DetectionModel::ideal().is_ideal());
    }

    #[test]
    fn no_noise_returns_input() {
        let p = PhotonPmf::poisson(4.0, 1e-12).unwrap();
        let mut d = DetectionModel::ideal();
        assert_eq!(apply_noise(&p, &d).unwrap(), p);
        // gaussian kind with zero variance is also a no-op
        d.noise_kind = NoiseKind::GaussianAdditive;
        assert_eq!(apply_noise(&p, &d).unwrap(), p);
    }

    #[test]
    fn dark_counts_on_vacuum_give_poisson() {
        let vac = PhotonPmf::poisson(0.0, 1e-12).unwrap();
        let d = DetectionModel::new(1.0, 1.0, 2.0, NoiseKind::PoissonDark).unwrap();
        let out = apply_noise(&vac, &d).unwrap();
        let expect = PhotonPmf::poisson(2.0, 1e-12).unwrap();
        for k in 0..30 {
            assert!((out.get(k) - expect.get(k)).abs() < 1e-10);
        }
        assert!((out.mean() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_noise_adds_variance_and_preserves_mean() {
        let p = PhotonPmf::poisson(1e5, 1e-10).unwrap();
        let d = DetectionModel::new(1.0, 1.0, 1e4, NoiseKind::GaussianAdditive).unwrap();
        let out = apply_noise(&p, &d).unwrap();
        let var = out.variance();
        assert!(((var - 1.1e5) / 1.1e5).abs() < 0.01, "variance {var}");
        assert!((out.mean() - p.mean()).abs() < 1e-6 * p.mean());
        assert!((out.total_mass() + out.tail_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rounded_gaussian_kernel_is_symmetric_and_normalized() {
        let k = rounded_gaussian(3.0, 1e-14).unwrap();
        assert_eq!(k.support_lo(), -k.support_hi());
        for j in 0..=k.support_hi() {
            assert!((k.get(j) - k.get(-j)).abs() < 1e-17);
        }
        assert!((k.total_mass() + k.tail_mass() - 1.0).abs() < 1e-12);
        // Sheppard's correction
        assert!((k.variance() - (3.0 + 1.0 / 12.0)).abs() < 1e-3);
    }

    #[test]
    fn cell_and_efficiency_channels_commute() {
        let p = PhotonPmf::thermal(3.0, 1e-13).unwrap();
        let cell = CellPair::new(0.6, 1.0).unwrap();
        let d = DetectionModel::lossy(0.76).unwrap();
        let a = binomial_thin(&binomial_thin(&p, cell.tau0()).unwrap(), d.eta_s).unwrap();
        let b = binomial_thin(&binomial_thin(&p, d.eta_s).unwrap(), cell.tau0()).unwrap();
        let c = binomial_thin(&p, effective_transmissivity(&cell, &d, Bit::Zero)).unwrap();
        for n in 0..80 {
            assert!((a.get(n) - b.get(n)).abs() < 1e-10);
            assert!((a.get(n) - c.get(n)).abs() < 1e-10);
        }
    }
}
