//! Normal approximation of the count statistics for large photon numbers.
//!
//! The error probability of the likelihood-ratio rule between two normals,
//! `½[P0(Q < 0) + P1(Q ≥ 0)]` with `Q = ln f0 − ln f1`, is evaluated by
//! whitening each hypothesis, rotating onto the principal axes of the
//! quadratic form, solving the inner coordinate in closed form and
//! integrating the outer one with adaptive Gauss–Kronrod quadrature.

use crate::channel::{noise_moments, Bit, CellPair, Copies, DetectionModel, SourceKind, SourceSpec};
use crate::error::{Error, Result};
use crate::special::{normal_cdf, normal_pdf, normal_sf};

/// Photon means below this are outside the useful range of the approximation.
pub const MIN_GAUSSIAN_MEAN: f64 = 50.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Outer integration range in standard deviations.
const OUTER_HALF_WIDTH: f64 = 12.0;
const QUAD_ABS_TOL: f64 = 1e-15;
const QUAD_REL_TOL: f64 = 1e-10;
const MAX_PANELS: usize = 20_000;

/// Normal model of `(n_S, n_I)`, or of `n_S` alone for single-arm sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianModel {
    mean: [f64; 2],
    cov: [[f64; 2]; 2],
    dim: usize,
}

impl GaussianModel {
    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::invalid(format!(
                "normal model needs finite mean and variance > 0 (mean={mean}, var={variance})"
            )));
        }
        Ok(Self { mean: [mean, 0.0], cov: [[variance, 0.0], [0.0, 0.0]], dim: 1 })
    }

    pub fn bivariate(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        let (a, b, c) = (cov[0][0], cov[0][1], cov[1][1]);
        if mean.iter().any(|m| !m.is_finite()) || [a, b, c].iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("normal model has non-finite moments"));
        }
        if (cov[1][0] - b).abs() > 1e-12 * (a * c).sqrt() {
            return Err(Error::invalid("covariance matrix must be symmetric"));
        }
        if !(a > 0.0 && c > 0.0) || a * c - b * b <= 1e-12 * a * c {
            return Err(Error::invalid(format!(
                "covariance matrix is not positive definite: [[{a}, {b}], [{b}, {c}]]"
            )));
        }
        Ok(Self { mean, cov: [[a, b], [b, c]], dim: 2 })
    }

    /// Moments of the counts under hypothesis `u`.
    ///
    /// With `s = η_S τ_u`, `i = η_I` and `V = N + N²/M` the variance of the
    /// pair number: `Var n_S = N s(1−s) + s²V`, `Cov = s i V`, plus read
    /// noise on each arm.
    pub fn for_hypothesis(source: &SourceSpec, cell: &CellPair, u: Bit, detect: &DetectionModel) -> Result<Self> {
        source.validate()?;
        detect.validate()?;
        let n = source.energy;
        let s = detect.eta_s * cell.tau(u);
        let (noise_mean, noise_var) = noise_moments(detect)?;
        match source.kind {
            SourceKind::ClassicalPoisson => Self::univariate(n * s + noise_mean, n * s + noise_var),
            SourceKind::Tmsv => {
                let i = detect.eta_i;
                let pairs_var = match source.copies {
                    Copies::Infinite => n,
                    Copies::Finite(m) => n + n * n / m as f64,
                };
                let var_s = n * s * (1.0 - s) + s * s * pairs_var + noise_var;
                let var_i = n * i * (1.0 - i) + i * i * pairs_var + noise_var;
                let cov = s * i * pairs_var;
                Self::bivariate([n * s + noise_mean, n * i + noise_mean], [[var_s, cov], [cov, var_i]])
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> [f64; 2] {
        self.mean
    }

    pub fn cov(&self) -> [[f64; 2]; 2] {
        self.cov
    }

    pub fn correlation(&self) -> f64 {
        if self.dim == 1 {
            return 0.0;
        }
        self.cov[0][1] / (self.cov[0][0] * self.cov[1][1]).sqrt()
    }

    fn det(&self) -> f64 {
        if self.dim == 1 {
            self.cov[0][0]
        } else {
            self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0]
        }
    }

    fn precision(&self) -> [[f64; 2]; 2] {
        if self.dim == 1 {
            return [[1.0 / self.cov[0][0], 0.0], [0.0, 0.0]];
        }
        let d = self.det();
        [[self.cov[1][1] / d, -self.cov[0][1] / d], [-self.cov[1][0] / d, self.cov[0][0] / d]]
    }

    /// Lower Cholesky factor of the covariance.
    fn cholesky(&self) -> [[f64; 2]; 2] {
        let l00 = self.cov[0][0].sqrt();
        if self.dim == 1 {
            return [[l00, 0.0], [0.0, 0.0]];
        }
        let l10 = self.cov[1][0] / l00;
        let l11 = (self.cov[1][1] - l10 * l10).sqrt();
        [[l00, 0.0], [l10, l11]]
    }

    /// Log density; the second coordinate is ignored for univariate models.
    pub fn ln_density(&self, x: [f64; 2]) -> f64 {
        let p = self.precision();
        let d0 = x[0] - self.mean[0];
        if self.dim == 1 {
            return -0.5 * (d0 * d0 * p[0][0] + LN_2PI + self.det().ln());
        }
        let d1 = x[1] - self.mean[1];
        let q = d0 * d0 * p[0][0] + 2.0 * d0 * d1 * p[0][1] + d1 * d1 * p[1][1];
        -0.5 * (q + 2.0 * LN_2PI + self.det().ln())
    }

    fn check_validity_floor(&self) -> Result<()> {
        for k in 0..self.dim {
            if self.mean[k] < MIN_GAUSSIAN_MEAN {
                return Err(Error::invalid(format!(
                    "normal approximation needs means ≥ {MIN_GAUSSIAN_MEAN}, got {}",
                    self.mean[k]
                )));
            }
        }
        Ok(())
    }
}

type Mat = [[f64; 2]; 2];

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn transpose(a: &Mat) -> Mat {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn mat_vec(a: &Mat, v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

fn quad_form(p: &Mat, v: [f64; 2]) -> f64 {
    let pv = mat_vec(p, v);
    v[0] * pv[0] + v[1] * pv[1]
}

/// `P(a w² + b w + c ≥ 0)` for standard normal `w`.
pub(crate) fn prob_quadratic_nonneg(a: f64, b: f64, c: f64) -> f64 {
    if a == 0.0 {
        return if b > 0.0 {
            normal_cdf(c / b)
        } else if b < 0.0 {
            normal_sf(c / b)
        } else if c >= 0.0 {
            1.0
        } else {
            0.0
        };
    }
    let disc = b * b - 4.0 * a * c;
    if disc <= 0.0 {
        return if a > 0.0 { 1.0 } else { 0.0 };
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let q = if b == 0.0 { -0.5 * sq } else { q };
    let (r1, r2) = {
        let x = q / a;
        let y = c / q;
        if x < y {
            (x, y)
        } else {
            (y, x)
        }
    };
    if a > 0.0 {
        normal_cdf(r1) + normal_sf(r2)
    } else if r1 >= 0.0 {
        normal_sf(r1) - normal_sf(r2)
    } else if r2 <= 0.0 {
        normal_cdf(r2) - normal_cdf(r1)
    } else {
        1.0 - normal_cdf(r1) - normal_sf(r2)
    }
}

/// Coefficients of `Q = ln f0 − ln f1` in the whitened coordinates of `g`:
/// `Q(μ_g + L z) = zᵀAz + bᵀz + c`.
fn whitened_form(g: &GaussianModel, g0: &GaussianModel, g1: &GaussianModel) -> (Mat, [f64; 2], f64) {
    let p0 = g0.precision();
    let p1 = g1.precision();
    let l = g.cholesky();
    let e0 = [g.mean[0] - g0.mean[0], g.mean[1] - g0.mean[1]];
    let e1 = [g.mean[0] - g1.mean[0], g.mean[1] - g1.mean[1]];
    // P1 − P0 = P1 (Σ0 − Σ1) P0, which keeps precision when Σ0 ≈ Σ1
    let ds = [
        [g0.cov[0][0] - g1.cov[0][0], g0.cov[0][1] - g1.cov[0][1]],
        [g0.cov[1][0] - g1.cov[1][0], g0.cov[1][1] - g1.cov[1][1]],
    ];
    let dp = mat_mul(&mat_mul(&p1, &ds), &p0);
    let mut a = mat_mul(&mat_mul(&transpose(&l), &dp), &l);
    for row in &mut a {
        for v in row.iter_mut() {
            *v *= 0.5;
        }
    }
    let sym = 0.5 * (a[0][1] + a[1][0]);
    a[0][1] = sym;
    a[1][0] = sym;
    let p1e1 = mat_vec(&p1, e1);
    let p0e0 = mat_vec(&p0, e0);
    let b = mat_vec(&transpose(&l), [p1e1[0] - p0e0[0], p1e1[1] - p0e0[1]]);
    let c = 0.5 * (quad_form(&p1, e1) - quad_form(&p0, e0)) + 0.5 * (g1.det() / g0.det()).ln();
    (a, b, c)
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point Gauss rule.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, (kron - gauss).abs() * h)
}

/// Adaptive Gauss–Kronrod integration on `[a, b]`, processed in a fixed order.
pub(crate) fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    const START_PANELS: usize = 24;
    let width = (b - a) / START_PANELS as f64;
    let mut stack: Vec<(f64, f64)> =
        (0..START_PANELS).rev().map(|k| (a + k as f64 * width, a + (k + 1) as f64 * width)).collect();
    let mut total = 0.0;
    let mut panels = 0;
    let mut pending: Vec<f64> = Vec::new();
    let coarse: f64 = stack.iter().map(|&(x, y)| gk15(&f, x, y).0).sum();
    let tol = QUAD_ABS_TOL.max(QUAD_REL_TOL * coarse.abs());
    while let Some((x, y)) = stack.pop() {
        panels += 1;
        if panels > MAX_PANELS {
            return Err(Error::Quadrature(format!("no convergence after {MAX_PANELS} panels on [{a}, {b}]")));
        }
        let (val, err) = gk15(&f, x, y);
        let share = tol * (y - x) / (b - a);
        if err <= share || (y - x) < 1e-9 * (b - a) {
            pending.push(val);
            continue;
        }
        let mid = 0.5 * (x + y);
        stack.push((mid, y));
        stack.push((x, mid));
    }
    for v in pending {
        total += v;
    }
    Ok(total)
}

/// Probability that the likelihood-ratio rule errs when `g` generates the data;
/// `wrong_is_nonneg` selects the error region `Q ≥ 0` (true bit 1) or `Q < 0` (true bit 0).
fn error_mass(g: &GaussianModel, g0: &GaussianModel, g1: &GaussianModel, wrong_is_nonneg: bool) -> Result<f64> {
    let sign = if wrong_is_nonneg { 1.0 } else { -1.0 };
    let (a, b, c) = whitened_form(g, g0, g1);
    if g.dim == 1 {
        return Ok(prob_quadratic_nonneg(sign * a[0][0], sign * b[0], sign * c));
    }
    // principal axes of A
    let theta = 0.5 * (2.0 * a[0][1]).atan2(a[0][0] - a[1][1]);
    let (sn, cs) = theta.sin_cos();
    let lam1 = a[0][0] * cs * cs + 2.0 * a[0][1] * sn * cs + a[1][1] * sn * sn;
    let lam2 = a[0][0] * sn * sn - 2.0 * a[0][1] * sn * cs + a[1][1] * cs * cs;
    let b1 = cs * b[0] + sn * b[1];
    let b2 = -sn * b[0] + cs * b[1];
    let inner = |w1: f64| {
        let rest = lam1 * w1 * w1 + b1 * w1 + c;
        normal_pdf(w1) * prob_quadratic_nonneg(sign * lam2, sign * b2, sign * rest)
    };
    integrate(inner, -OUTER_HALF_WIDTH, OUTER_HALF_WIDTH)
}

/// Error probability of the maximum-likelihood rule between two normal models.
///
/// This is an approximation to the photon-counting error probability, meant
/// for photon numbers where exact summation is too expensive.
pub fn error_probability_gaussian_approx(g0: &GaussianModel, g1: &GaussianModel) -> Result<f64> {
    if g0.dim != g1.dim {
        return Err(Error::invalid("normal models must have the same dimension"));
    }
    g0.check_validity_floor()?;
    g1.check_validity_floor()?;
    if g0 == g1 {
        return Ok(0.5);
    }
    let e0 = error_mass(g0, g0, g1, false)?;
    let e1 = error_mass(g1, g0, g1, true)?;
    Ok((0.5 * (e0 + e1)).clamp(0.0, 0.5))
}

/// Normal-approximation error probability for a full configuration.
pub fn gaussian_error_probability_for(source: &SourceSpec, cell: &CellPair, detect: &DetectionModel) -> Result<f64> {
    if cell.is_degenerate() {
        return Ok(0.5);
    }
    let g0 = GaussianModel::for_hypothesis(source, cell, Bit::Zero, detect)?;
    let g1 = GaussianModel::for_hypothesis(source, cell, Bit::One, detect)?;
    error_probability_gaussian_approx(&g0, &g1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::NoiseKind;
    use crate::decision::exact_error_probability_for;

    #[test]
    fn quadratic_probabilities() {
        assert!((prob_quadratic_nonneg(0.0, 1.0, 0.0) - 0.5).abs() < 1e-16);
        // w² − 1 ≥ 0  ⇔  |w| ≥ 1
        assert!((prob_quadratic_nonneg(1.0, 0.0, -1.0) - 2.0 * normal_sf(1.0)).abs() < 1e-15);
        assert!((prob_quadratic_nonneg(-1.0, 0.0, 1.0) - (1.0 - 2.0 * normal_sf(1.0))).abs() < 1e-15);
        assert_eq!(prob_quadratic_nonneg(1.0, 0.0, 1.0), 1.0);
        assert_eq!(prob_quadratic_nonneg(-1.0, 0.0, -1.0), 0.0);
        // (w−3)(w−5) ≥ 0 with one root far out
        let p = prob_quadratic_nonneg(1.0, -8.0, 15.0);
        assert!((p - (normal_cdf(3.0) + normal_sf(5.0))).abs() < 1e-15);
    }

    #[test]
    fn integrator_handles_smooth_and_kinked_integrands() {
        let v = integrate(normal_pdf, -12.0, 12.0).unwrap();
        assert!((v - 1.0).abs() < 1e-13);
        let v = integrate(|x: f64| x.abs().sqrt(), -1.0, 1.0).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn identical_models_give_one_half() {
        let g = GaussianModel::bivariate([100.0, 90.0], [[100.0, 60.0], [60.0, 90.0]]).unwrap();
        assert_eq!(error_probability_gaussian_approx(&g, &g).unwrap(), 0.5);
    }

    #[test]
    fn equal_variance_shift_has_closed_form() {
        // two normals of equal variance: p = Φ(−d/2σ)
        let g0 = GaussianModel::univariate(100.0, 25.0).unwrap();
        let g1 = GaussianModel::univariate(110.0, 25.0).unwrap();
        let p = error_probability_gaussian_approx(&g0, &g1).unwrap();
        assert!((p - normal_cdf(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn uncorrelated_idler_reduces_to_one_dimension() {
        let g0 = GaussianModel::univariate(100.0, 100.0).unwrap();
        let g1 = GaussianModel::univariate(200.0, 200.0).unwrap();
        let one = error_probability_gaussian_approx(&g0, &g1).unwrap();
        let h0 = GaussianModel::bivariate([100.0, 300.0], [[100.0, 0.0], [0.0, 300.0]]).unwrap();
        let h1 = GaussianModel::bivariate([200.0, 300.0], [[200.0, 0.0], [0.0, 300.0]]).unwrap();
        let two = error_probability_gaussian_approx(&h0, &h1).unwrap();
        assert!((one - two).abs() < 1e-12, "{one} vs {two}");
    }

    #[test]
    fn one_dimensional_reduction_tracks_exact_summation() {
        let src = SourceSpec::classical(200.0).unwrap();
        let cell = CellPair::new(0.5, 1.0).unwrap();
        let d = DetectionModel::ideal();
        let exact = exact_error_probability_for(&src, &cell, &d, 1e-14).unwrap().value;
        let approx = gaussian_error_probability_for(&src, &cell, &d).unwrap();
        assert!(((approx - exact) / exact).abs() < 0.02, "{approx} vs {exact}");
    }

    #[test]
    fn bivariate_path_tracks_exact_summation() {
        // moderate deviations only: far in the tail the normal shape is off by orders of magnitude
        let d = DetectionModel::lossy(0.76).unwrap();
        for (n, t0) in [(100.0, 0.9), (200.0, 0.9), (500.0, 0.9), (1000.0, 0.95), (2000.0, 0.9), (2000.0, 0.99)] {
            let src = SourceSpec::tmsv_poisson_limit(n).unwrap();
            let cell = CellPair::new(t0, 1.0).unwrap();
            let exact = exact_error_probability_for(&src, &cell, &d, 1e-13).unwrap().value;
            let approx = gaussian_error_probability_for(&src, &cell, &d).unwrap();
            assert!(((approx - exact) / exact).abs() < 0.02, "N={n} τ0={t0}: {approx} vs {exact}");
        }
    }

    #[test]
    fn refuses_small_means_and_singular_covariance() {
        let g0 = GaussianModel::univariate(10.0, 10.0).unwrap();
        let g1 = GaussianModel::univariate(20.0, 20.0).unwrap();
        assert!(error_probability_gaussian_approx(&g0, &g1).is_err());
        assert!(GaussianModel::bivariate([100.0, 100.0], [[100.0, 100.0], [100.0, 100.0]]).is_err());
        let src = SourceSpec::tmsv_poisson_limit(1e4).unwrap();
        let cell = CellPair::new(0.9, 1.0).unwrap();
        assert!(GaussianModel::for_hypothesis(&src, &cell, Bit::One, &DetectionModel::ideal()).is_err());
    }

    #[test]
    fn experimental_point_beats_classical_counting() {
        let src = SourceSpec::tmsv_poisson_limit(1.15e5).unwrap();
        let cell = CellPair::new(0.996, 1.0).unwrap();
        let d = DetectionModel::new(0.78, 0.77, 1e4, NoiseKind::GaussianAdditive).unwrap();
        let p = gaussian_error_probability_for(&src, &cell, &d).unwrap();
        let c = crate::bounds::classical_phc_bound(1.15e5, &cell, &d).unwrap();
        assert!(p < c, "{p} vs {c}");
    }
}
