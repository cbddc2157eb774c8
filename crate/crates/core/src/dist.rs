//! Photon-number distributions, binomial thinning and signal–idler joint pmfs.
//!
//! Every pmf is a window of exact probabilities plus `tail_mass`, the
//! probability that falls outside the window. Windows grow in units of the
//! standard deviation until a Chernoff bound on the omitted mass drops below
//! the requested tolerance.

use rayon::prelude::*;

use crate::channel::{noise_kernel, Copies, DetectionModel, SourceKind, SourceSpec};
use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::special::{bd0, ln_binomial_pmf, ln_poisson_pmf};

pub const DEFAULT_TRUNC_TOL: f64 = 1e-10;

/// Upper limit on stored joint-pmf entries (about 400 MB of f64).
pub const MAX_JOINT_ENTRIES: usize = 50_000_000;

/// Upper limit on multiply-adds when building a finite-M joint pmf.
const MAX_FINITE_M_WORK: f64 = 4e9;

/// Relative cut-off for binomial kernel rows; the omitted part is still
/// accounted for in `tail_mass`.
const ROW_EPS: f64 = 1e-22;

/// Largest count for which `f64` arithmetic on counts is exact.
const MAX_EXACT_COUNT: f64 = 9.007_199_254_740_992e15;

fn check_tol(trunc_tol: f64) -> Result<()> {
    if !(trunc_tol > 0.0 && trunc_tol < 1.0) {
        return Err(Error::invalid(format!("truncation tolerance must lie in (0,1), got {trunc_tol}")));
    }
    Ok(())
}

/// A truncated pmf over integer counts `support_lo..=support_hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonPmf {
    lo: i64,
    probs: Vec<f64>,
    tail_mass: f64,
}

impl PhotonPmf {
    pub fn from_parts(lo: i64, probs: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("pmf window must be non-empty"));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("pmf entries must be finite and non-negative"));
        }
        if !(tail_mass >= 0.0) {
            return Err(Error::invalid(format!("tail mass must be ≥ 0, got {tail_mass}")));
        }
        Ok(Self { lo, probs, tail_mass })
    }

    /// Point mass at `n`.
    pub fn point(n: i64) -> Self {
        Self { lo: n, probs: vec![1.0], tail_mass: 0.0 }
    }

    pub fn poisson(mean: f64, trunc_tol: f64) -> Result<Self> {
        poisson_pmf(mean, trunc_tol)
    }

    pub fn thermal(nbar: f64, trunc_tol: f64) -> Result<Self> {
        thermal_pmf(nbar, trunc_tol)
    }

    pub fn multithermal(energy: f64, modes: u64, trunc_tol: f64) -> Result<Self> {
        multithermal_pmf(energy, modes, trunc_tol)
    }

    pub fn support_lo(&self) -> i64 {
        self.lo
    }

    pub fn support_hi(&self) -> i64 {
        self.lo + self.probs.len() as i64 - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    /// Probability of count `n`; zero outside the window.
    pub fn get(&self, n: i64) -> f64 {
        if n < self.lo {
            return 0.0;
        }
        self.probs.get((n - self.lo) as usize).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(k, &p)| (self.lo + k as i64, p))
    }

    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.probs)
    }

    /// Mean over the window, normalized by the in-window mass.
    pub fn mean(&self) -> f64 {
        let m: Vec<f64> = self.iter().map(|(n, p)| n as f64 * p).collect();
        pairwise_sum(&m) / self.total_mass()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let v: Vec<f64> = self.iter().map(|(n, p)| (n as f64 - mu).powi(2) * p).collect();
        pairwise_sum(&v) / self.total_mass()
    }

    /// Largest absolute pointwise difference over the union of both windows.
    pub fn sup_distance(&self, other: &PhotonPmf) -> f64 {
        let lo = self.lo.min(other.lo);
        let hi = self.support_hi().max(other.support_hi());
        (lo..=hi).map(|n| (self.get(n) - other.get(n)).abs()).fold(0.0, f64::max)
    }
}

/// Builds a pmf from a log-pmf on `lo..=hi`; `bound` is a rigorous upper
/// bound on the mass outside the window.
fn from_log_pmf(lo: i64, hi: i64, bound: f64, ln_pmf: impl Fn(f64) -> f64) -> PhotonPmf {
    let probs: Vec<f64> = (lo..=hi).map(|k| ln_pmf(k as f64).exp()).collect();
    let missing = (1.0 - pairwise_sum(&probs)).max(0.0);
    PhotonPmf { lo, probs, tail_mass: missing.min(bound) }
}

/// Grows `mean ± k·σ` until `tails(lo, hi)` (a bound on the omitted mass) is
/// at most `trunc_tol`. Returns `(lo, hi, bound)`.
fn grow_window(mean: f64, sigma: f64, trunc_tol: f64, tails: impl Fn(i64, i64) -> f64) -> (i64, i64, f64) {
    let sigma = sigma.max(1.0);
    let mut k = 4.0_f64;
    loop {
        let lo = (mean - k * sigma).floor().max(0.0) as i64;
        let hi = (mean + k * sigma).ceil() as i64;
        let bound = tails(lo, hi);
        if bound <= trunc_tol {
            return (lo, hi, bound);
        }
        k += 0.5_f64.max(k / 8.0);
    }
}

/// Poisson pmf with the given mean.
pub fn poisson_pmf(mean: f64, trunc_tol: f64) -> Result<PhotonPmf> {
    check_tol(trunc_tol)?;
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::invalid(format!("Poisson mean must be finite and ≥ 0, got {mean}")));
    }
    if mean > MAX_EXACT_COUNT {
        return Err(Error::Overflow(format!("Poisson mean {mean} exceeds exact integer range")));
    }
    if mean == 0.0 {
        return Ok(PhotonPmf::point(0));
    }
    // Chernoff: P(X ≤ a) ≤ e^{-bd0(a, λ)} for a ≤ λ, and likewise for X ≥ a ≥ λ.
    let tails = |lo: i64, hi: i64| {
        let lower = if lo > 0 { (-bd0((lo - 1) as f64, mean)).exp() } else { 0.0 };
        let upper = (-bd0((hi + 1) as f64, mean)).exp();
        lower + upper
    };
    let (lo, hi, bound) = grow_window(mean, mean.sqrt(), trunc_tol, tails);
    Ok(from_log_pmf(lo, hi, bound, |k| ln_poisson_pmf(k, mean)))
}

/// Single-mode thermal (geometric) pmf `n̄ⁿ/(n̄+1)ⁿ⁺¹`.
pub fn thermal_pmf(nbar: f64, trunc_tol: f64) -> Result<PhotonPmf> {
    multithermal_pmf(nbar, 1, trunc_tol)
}

/// Chernoff bound (log) on the tail of a negative binomial with `r` modes and
/// mean `n̄` per mode, beyond `a` on the side away from the mean.
fn ln_nb_chernoff(a: f64, r: f64, nbar: f64) -> f64 {
    let ln_q = nbar.ln() - nbar.ln_1p();
    let ln_first = -r * nbar.ln_1p() + r * (a / r).ln_1p();
    if a == 0.0 {
        return ln_first;
    }
    ln_first + a * (ln_q + (r / a).ln_1p())
}

/// Photon-number pmf of `M` independent thermal modes with `N` photons in
/// total (negative binomial with `M` trials and `N/M` photons per mode).
pub fn multithermal_pmf(energy: f64, modes: u64, trunc_tol: f64) -> Result<PhotonPmf> {
    check_tol(trunc_tol)?;
    if !(energy >= 0.0) || !energy.is_finite() {
        return Err(Error::invalid(format!("energy must be finite and ≥ 0, got {energy}")));
    }
    if modes == 0 {
        return Err(Error::invalid("mode count must be ≥ 1"));
    }
    if energy == 0.0 {
        return Ok(PhotonPmf::point(0));
    }
    let r = modes as f64;
    let nbar = energy / r;
    let sigma = (energy * (1.0 + nbar)).sqrt();
    let tails = |lo: i64, hi: i64| {
        let lower = if lo > 0 { ln_nb_chernoff((lo - 1) as f64, r, nbar).exp() } else { 0.0 };
        let upper = ln_nb_chernoff((hi + 1) as f64, r, nbar).exp();
        lower + upper
    };
    let (lo, hi, bound) = grow_window(energy, sigma, trunc_tol, tails);
    if r + hi as f64 > MAX_EXACT_COUNT {
        return Err(Error::Overflow(format!("M + n = {} exceeds exact log-gamma range", r + hi as f64)));
    }
    let p = 1.0 / (1.0 + nbar);
    let q = nbar / (1.0 + nbar);
    // P(n) = M/(M+n) · Binomial(M | M+n, 1/(1+n̄))
    Ok(from_log_pmf(lo, hi, bound, |n| (r / (r + n)).ln() + ln_binomial_pmf(r, r + n, p, q)))
}

/// Binomial(m, p) pmf over the window where it is non-negligible.
/// Returns `(lo, probs, omitted)` where `omitted` bounds the dropped mass.
pub(crate) fn binomial_row(m: u64, p: f64) -> (u64, Vec<f64>, f64) {
    let q = 1.0 - p;
    if m == 0 || p == 0.0 {
        return (0, vec![1.0], 0.0);
    }
    if q == 0.0 {
        return (m, vec![1.0], 0.0);
    }
    let mf = m as f64;
    let mode = (((m + 1) as f64 * p).floor() as u64).min(m);
    let t_mode = ln_binomial_pmf(mode as f64, mf, p, q).exp();
    let odds = p / q;
    let cut = ROW_EPS * t_mode;
    let mut omitted = 0.0;

    let mut up = Vec::new();
    let mut t = t_mode;
    let mut k = mode;
    while k < m {
        let ratio = (mf - k as f64) / (k + 1) as f64 * odds;
        t *= ratio;
        k += 1;
        if t < cut {
            let r_next = (mf - k as f64) / (k + 1) as f64 * odds;
            omitted += if r_next < 1.0 { t / (1.0 - r_next) } else { t * (m - k + 1) as f64 };
            break;
        }
        up.push(t);
    }

    let mut down = Vec::new();
    let mut t = t_mode;
    let mut k = mode;
    while k > 0 {
        let ratio = k as f64 / (mf - k as f64 + 1.0) / odds;
        t *= ratio;
        k -= 1;
        if t < cut {
            let r_next = if k > 0 { k as f64 / (mf - k as f64 + 1.0) / odds } else { 0.0 };
            omitted += if r_next < 1.0 { t / (1.0 - r_next) } else { t * (k + 1) as f64 };
            break;
        }
        down.push(t);
    }

    let lo = mode - down.len() as u64;
    let mut probs = Vec::with_capacity(down.len() + 1 + up.len());
    probs.extend(down.into_iter().rev());
    probs.push(t_mode);
    probs.extend(up);
    (lo, probs, omitted)
}

/// Action of a pure-loss channel of transmissivity `tau` on a count pmf:
/// `p'(n) = Σ_m p(m) B(n | m, τ)`.
pub fn binomial_thin(pmf: &PhotonPmf, tau: f64) -> Result<PhotonPmf> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("transmissivity must lie in [0,1], got {tau}")));
    }
    if pmf.lo < 0 {
        return Err(Error::invalid("binomial thinning needs a pmf over non-negative counts"));
    }
    if tau == 1.0 {
        return Ok(pmf.clone());
    }
    if tau == 0.0 {
        return Ok(PhotonPmf::point(0));
    }
    let hi = pmf.support_hi() as usize;
    let mut out = vec![0.0; hi + 1];
    let mut omitted = 0.0;
    for (m, pm) in pmf.iter() {
        if pm == 0.0 {
            continue;
        }
        let (rlo, row, om) = binomial_row(m as u64, tau);
        for (j, b) in row.iter().enumerate() {
            out[rlo as usize + j] += pm * b;
        }
        omitted += pm * om;
    }
    let first = out.iter().position(|&p| p > 0.0).unwrap_or(0);
    let last = out.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let probs = out[first..=last].to_vec();
    Ok(PhotonPmf { lo: first as i64, probs, tail_mass: pmf.tail_mass + omitted })
}

/// Full linear convolution of two dense sequences.
pub(crate) fn convolve_slices(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

/// Distribution of the sum of two independent counts.
pub fn convolve(a: &PhotonPmf, b: &PhotonPmf) -> Result<PhotonPmf> {
    if a.probs.len().saturating_mul(b.probs.len()) > MAX_JOINT_ENTRIES * 20 {
        return Err(Error::TruncationFailure(format!(
            "convolution of windows {} × {} exceeds the work budget",
            a.probs.len(),
            b.probs.len()
        )));
    }
    let probs = convolve_slices(&a.probs, &b.probs);
    let tail = a.tail_mass + b.tail_mass - a.tail_mass * b.tail_mass;
    Ok(PhotonPmf { lo: a.lo + b.lo, probs, tail_mass: tail })
}

/// One row `n_S = s` of a joint pmf: probabilities over `n_I = i_lo..`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointRow {
    pub i_lo: i64,
    pub probs: Vec<f64>,
}

impl JointRow {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn i_hi(&self) -> i64 {
        self.i_lo + self.probs.len() as i64 - 1
    }

    pub fn get(&self, i: i64) -> f64 {
        if i < self.i_lo {
            return 0.0;
        }
        self.probs.get((i - self.i_lo) as usize).copied().unwrap_or(0.0)
    }

    /// Adds `scale · values` at `i_lo..`, growing the row as needed.
    pub(crate) fn accumulate(&mut self, i_lo: i64, values: &[f64], scale: f64) {
        if values.is_empty() {
            return;
        }
        if self.probs.is_empty() {
            self.i_lo = i_lo;
            self.probs = values.iter().map(|v| v * scale).collect();
            return;
        }
        let new_lo = self.i_lo.min(i_lo);
        let new_hi = self.i_hi().max(i_lo + values.len() as i64 - 1);
        if new_lo < self.i_lo || new_hi > self.i_hi() {
            let mut grown = vec![0.0; (new_hi - new_lo + 1) as usize];
            let off = (self.i_lo - new_lo) as usize;
            grown[off..off + self.probs.len()].copy_from_slice(&self.probs);
            self.i_lo = new_lo;
            self.probs = grown;
        }
        let off = (i_lo - self.i_lo) as usize;
        for (o, v) in self.probs[off..].iter_mut().zip(values) {
            *o += v * scale;
        }
    }
}

/// A joint (n_S, n_I) distribution that can be evaluated one signal row at a time.
pub trait JointModel: Sync {
    /// Inclusive range of signal counts with non-zero rows.
    fn s_range(&self) -> (i64, i64);
    fn row(&self, s: i64) -> JointRow;
    /// Probability outside the represented support.
    fn tail_mass(&self) -> f64;
    /// Upper bound on the number of stored entries if materialized.
    fn entry_estimate(&self) -> usize;

    /// Rows `lo..=hi` in order. Models with a row recurrence override this.
    fn rows_in(&self, lo: i64, hi: i64) -> Vec<JointRow> {
        (lo..=hi).map(|s| self.row(s)).collect()
    }
}

/// Rows per work unit when a joint model is evaluated in parallel. Fixed so
/// that results do not depend on the thread count.
pub const ROW_CHUNK: i64 = 64;

/// Splits `lo..=hi` into consecutive `ROW_CHUNK`-sized ranges.
pub fn row_chunks(lo: i64, hi: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    let mut a = lo;
    while a <= hi {
        let b = (a + ROW_CHUNK - 1).min(hi);
        out.push((a, b));
        a = b + 1;
    }
    out
}

/// Materialized joint pmf with ragged rows (one idler window per signal count).
#[derive(Debug, Clone, PartialEq)]
pub struct JointPmf {
    s_lo: i64,
    rows: Vec<JointRow>,
    tail_mass: f64,
}

impl JointPmf {
    pub fn from_rows(s_lo: i64, rows: Vec<JointRow>, tail_mass: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("joint pmf needs at least one row"));
        }
        if rows.iter().flat_map(|r| &r.probs).any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid("joint pmf entries must be non-negative"));
        }
        Ok(Self { s_lo, rows, tail_mass })
    }

    /// Evaluates every row of `model`, refusing if it would exceed [`MAX_JOINT_ENTRIES`].
    pub fn from_model<M: JointModel + ?Sized>(model: &M) -> Result<Self> {
        let est = model.entry_estimate();
        if est > MAX_JOINT_ENTRIES {
            return Err(Error::TruncationFailure(format!(
                "joint pmf needs ~{est} entries, budget is {MAX_JOINT_ENTRIES}"
            )));
        }
        let (lo, hi) = model.s_range();
        let chunks: Vec<Vec<JointRow>> = row_chunks(lo, hi).into_par_iter().map(|(a, b)| model.rows_in(a, b)).collect();
        Ok(Self { s_lo: lo, rows: chunks.concat(), tail_mass: model.tail_mass() })
    }

    /// Single-arm model: the idler count is identically zero.
    pub fn from_signal_pmf(pmf: &PhotonPmf) -> Self {
        let rows = pmf.probs.iter().map(|&p| JointRow { i_lo: 0, probs: vec![p] }).collect();
        Self { s_lo: pmf.lo, rows, tail_mass: pmf.tail_mass }
    }

    pub fn get(&self, s: i64, i: i64) -> f64 {
        if s < self.s_lo {
            return 0.0;
        }
        self.rows.get((s - self.s_lo) as usize).map_or(0.0, |r| r.get(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = (i64, &JointRow)> {
        self.rows.iter().enumerate().map(move |(k, r)| (self.s_lo + k as i64, r))
    }

    pub fn s_window(&self) -> (i64, i64) {
        (self.s_lo, self.s_lo + self.rows.len() as i64 - 1)
    }

    pub fn i_window(&self) -> (i64, i64) {
        let nonempty = self.rows.iter().filter(|r| !r.probs.is_empty());
        let lo = nonempty.clone().map(|r| r.i_lo).min().unwrap_or(0);
        let hi = nonempty.map(|r| r.i_hi()).max().unwrap_or(0);
        (lo, hi)
    }

    pub fn entries(&self) -> usize {
        self.rows.iter().map(|r| r.probs.len()).sum()
    }

    pub fn total_mass(&self) -> f64 {
        let per_row: Vec<f64> = self.rows.iter().map(|r| pairwise_sum(&r.probs)).collect();
        pairwise_sum(&per_row)
    }

    pub fn signal_marginal(&self) -> PhotonPmf {
        let probs = self.rows.iter().map(|r| pairwise_sum(&r.probs)).collect();
        PhotonPmf { lo: self.s_lo, probs, tail_mass: self.tail_mass }
    }

    pub fn idler_marginal(&self) -> PhotonPmf {
        let (lo, hi) = self.i_window();
        let mut acc = JointRow { i_lo: lo, probs: vec![0.0; (hi - lo + 1) as usize] };
        for r in &self.rows {
            acc.accumulate(r.i_lo, &r.probs, 1.0);
        }
        PhotonPmf { lo, probs: acc.probs, tail_mass: self.tail_mass }
    }

    /// Convolves the signal and/or idler count with independent noise.
    pub fn with_noise(&self, signal: Option<&PhotonPmf>, idler: Option<&PhotonPmf>) -> Result<Self> {
        let point = PhotonPmf::point(0);
        let ks = signal.unwrap_or(&point);
        let ki = idler.unwrap_or(&point);
        let est = (self.rows.len() + ks.probs.len())
            * (self.i_window().1 - self.i_window().0 + 1 + ki.probs.len() as i64) as usize;
        if est > MAX_JOINT_ENTRIES {
            return Err(Error::TruncationFailure(format!(
                "noisy joint pmf needs ~{est} entries, budget is {MAX_JOINT_ENTRIES}"
            )));
        }
        let s_lo = self.s_lo + ks.lo;
        let mut rows = vec![JointRow::empty(); self.rows.len() + ks.probs.len() - 1];
        for (k, r) in self.rows.iter().enumerate() {
            if r.probs.is_empty() {
                continue;
            }
            let smeared = convolve_slices(&r.probs, &ki.probs);
            let i_lo = r.i_lo + ki.lo;
            for (ds, &w) in ks.probs.iter().enumerate() {
                if w > 0.0 {
                    rows[k + ds].accumulate(i_lo, &smeared, w);
                }
            }
        }
        let t = |a: f64, b: f64| a + b - a * b;
        let tail = t(self.tail_mass, t(ks.tail_mass, ki.tail_mass));
        Ok(Self { s_lo, rows, tail_mass: tail })
    }
}

impl JointModel for JointPmf {
    fn s_range(&self) -> (i64, i64) {
        self.s_window()
    }

    fn row(&self, s: i64) -> JointRow {
        if s < self.s_lo {
            return JointRow::empty();
        }
        self.rows.get((s - self.s_lo) as usize).cloned().unwrap_or_default()
    }

    fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    fn entry_estimate(&self) -> usize {
        self.entries()
    }
}

/// Poisson-limit TMSV joint after loss: `n_S = c + a`, `n_I = c + b` with
/// independent Poisson `c` (pairs where both photons are detected), `a`
/// (signal only) and `b` (idler only).
///
/// A row is `P(n_S = s) · [Binomial(s, λ_c/(λ_c+λ_a)) ⊛ Poisson(λ_b)]`, and
/// consecutive rows obey `s·P(s, y) = λ_a P(s−1, y) + λ_c P(s−1, y−1)`.
/// Both terms are non-negative, so the recurrence is forward stable; each
/// run of rows starts from one directly evaluated row.
#[derive(Debug, Clone)]
pub struct PoissonLimitJoint {
    both: f64,
    signal_only: f64,
    signal: PhotonPmf,
    idler_only: PhotonPmf,
}

/// Entries below this fraction of their row maximum are dropped during the recurrence.
const TRIM_REL: f64 = 1e-30;

/// Bound on mass lost to binomial-row cuts and recurrence trimming.
const RECURRENCE_SLACK: f64 = 1e-20;

impl PoissonLimitJoint {
    /// `signal_t` and `idler_t` are the overall per-photon detection probabilities of each arm.
    pub fn new(energy: f64, signal_t: f64, idler_t: f64, trunc_tol: f64) -> Result<Self> {
        check_tol(trunc_tol)?;
        if !(energy >= 0.0) || !energy.is_finite() {
            return Err(Error::invalid(format!("source energy must be finite and ≥ 0, got {energy}")));
        }
        for t in [signal_t, idler_t] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("arm transmissivity must lie in [0,1], got {t}")));
            }
        }
        let tol = trunc_tol / 2.0;
        Ok(Self {
            both: energy * signal_t * idler_t,
            signal_only: energy * signal_t * (1.0 - idler_t),
            signal: poisson_pmf(energy * signal_t, tol)?,
            idler_only: poisson_pmf(energy * (1.0 - signal_t) * idler_t, tol)?,
        })
    }

    fn exact_row(&self, s: i64) -> JointRow {
        let ps = self.signal.get(s);
        if ps == 0.0 || s < 0 {
            return JointRow::empty();
        }
        let total = self.both + self.signal_only;
        let p = if total > 0.0 { self.both / total } else { 0.0 };
        let (c_lo, c_row, _) = binomial_row(s as u64, p);
        let mut probs = convolve_slices(&c_row, &self.idler_only.probs);
        for v in &mut probs {
            *v *= ps;
        }
        JointRow { i_lo: c_lo as i64 + self.idler_only.lo, probs }
    }

    fn next_row(&self, prev: &JointRow, s: i64) -> JointRow {
        let n = prev.probs.len();
        let inv = 1.0 / s as f64;
        let mut probs = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let stay = if k < n { self.signal_only * prev.probs[k] } else { 0.0 };
            let pair = if k > 0 { self.both * prev.probs[k - 1] } else { 0.0 };
            probs.push((stay + pair) * inv);
        }
        let peak = probs.iter().copied().fold(0.0, f64::max);
        let cut = peak * TRIM_REL;
        let Some(first) = probs.iter().position(|&v| v > cut) else {
            return JointRow::empty();
        };
        let last = probs.iter().rposition(|&v| v > cut).unwrap_or(first);
        JointRow { i_lo: prev.i_lo + first as i64, probs: probs[first..=last].to_vec() }
    }
}

impl JointModel for PoissonLimitJoint {
    fn s_range(&self) -> (i64, i64) {
        (self.signal.lo, self.signal.support_hi())
    }

    fn row(&self, s: i64) -> JointRow {
        self.exact_row(s)
    }

    fn rows_in(&self, lo: i64, hi: i64) -> Vec<JointRow> {
        let mut rows: Vec<JointRow> = Vec::with_capacity((hi - lo + 1).max(0) as usize);
        for s in lo..=hi {
            let row = match rows.last() {
                Some(prev) if !prev.probs.is_empty() => self.next_row(prev, s),
                _ => self.exact_row(s),
            };
            rows.push(row);
        }
        rows
    }

    fn tail_mass(&self) -> f64 {
        let kept = (1.0 - self.signal.tail_mass) * (1.0 - self.idler_only.tail_mass);
        (1.0 - kept + RECURRENCE_SLACK).min(1.0)
    }

    fn entry_estimate(&self) -> usize {
        let rows = self.signal.probs.len();
        let total = self.both + self.signal_only;
        let p = if total > 0.0 { self.both / total } else { 0.0 };
        let s_hi = self.signal.support_hi().max(0) as f64;
        let c_width = 2.0 * 12.0 * (s_hi * p * (1.0 - p)).sqrt() + 1.0;
        let width = c_width as usize + self.idler_only.probs.len() + ROW_CHUNK as usize;
        rows.saturating_mul(width)
    }
}

/// Finite-M TMSV joint: pair number `m` is multi-thermal, and given `m` the
/// two arms are independent binomial thinnings.
fn finite_m_joint(energy: f64, modes: u64, signal_t: f64, idler_t: f64, trunc_tol: f64) -> Result<JointPmf> {
    let pairs = multithermal_pmf(energy, modes, trunc_tol / 2.0)?;
    let mut work = 0.0;
    let mut kernels = Vec::with_capacity(pairs.probs.len());
    for (m, _) in pairs.iter() {
        let rs = binomial_row(m as u64, signal_t);
        let ri = binomial_row(m as u64, idler_t);
        work += rs.1.len() as f64 * ri.1.len() as f64;
        if work > MAX_FINITE_M_WORK {
            return Err(Error::TruncationFailure(format!(
                "finite-M joint for N={energy}, M={modes} exceeds the work budget; use the Poisson limit"
            )));
        }
        kernels.push((rs, ri));
    }
    let s_hi = pairs.support_hi();
    let mut rows = vec![JointRow::empty(); (s_hi + 1) as usize];
    let mut omitted = 0.0;
    for ((_, pm), ((s_lo, s_row, s_om), (i_lo, i_row, i_om))) in pairs.iter().zip(&kernels) {
        for (k, &ps) in s_row.iter().enumerate() {
            rows[*s_lo as usize + k].accumulate(*i_lo as i64, i_row, pm * ps);
        }
        omitted += pm * (s_om + i_om);
    }
    let first = rows.iter().position(|r| !r.probs.is_empty()).unwrap_or(0);
    let last = rows.iter().rposition(|r| !r.probs.is_empty()).unwrap_or(0);
    let rows = rows[first..=last].to_vec();
    JointPmf::from_rows(first as i64, rows, pairs.tail_mass + omitted)
}

/// Joint (n_S, n_I) pmf of a TMSV transmitter after a cell of transmissivity
/// `tau`, detector efficiencies, and electronic noise.
pub fn tmsv_joint_pmf(source: &SourceSpec, tau: f64, detect: &DetectionModel, trunc_tol: f64) -> Result<JointPmf> {
    check_tol(trunc_tol)?;
    source.validate()?;
    detect.validate()?;
    if source.kind != SourceKind::Tmsv {
        return Err(Error::invalid("tmsv_joint_pmf needs a TMSV source"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("transmissivity must lie in [0,1], got {tau}")));
    }
    let signal_t = detect.eta_s * tau;
    let tol = if detect.has_noise() { trunc_tol / 2.0 } else { trunc_tol };
    let clean = match source.copies {
        _ if source.energy == 0.0 => JointPmf::from_rows(0, vec![JointRow { i_lo: 0, probs: vec![1.0] }], 0.0)?,
        Copies::Infinite => JointPmf::from_model(&PoissonLimitJoint::new(source.energy, signal_t, detect.eta_i, tol)?)?,
        Copies::Finite(m) => finite_m_joint(source.energy, m, signal_t, detect.eta_i, tol)?,
    };
    match noise_kernel(detect, tol / 2.0)? {
        None => Ok(clean),
        Some(k) => clean.with_noise(Some(&k), Some(&k)),
    }
}

/// Single-arm model for a coherent (Poisson) transmitter; noise acts on the signal only.
pub fn classical_joint_pmf(source: &SourceSpec, tau: f64, detect: &DetectionModel, trunc_tol: f64) -> Result<JointPmf> {
    check_tol(trunc_tol)?;
    source.validate()?;
    detect.validate()?;
    if source.kind != SourceKind::ClassicalPoisson {
        return Err(Error::invalid("classical_joint_pmf needs a classical source"));
    }
    let tol = if detect.has_noise() { trunc_tol / 2.0 } else { trunc_tol };
    let clean = poisson_pmf(source.energy * detect.eta_s * tau, tol)?;
    let noisy = match noise_kernel(detect, tol)? {
        None => clean,
        Some(k) => convolve(&clean, &k)?,
    };
    Ok(JointPmf::from_signal_pmf(&noisy))
}
