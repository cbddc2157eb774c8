//! Parameter grids over `(τ0, N)`, per-point evaluation and CSV/JSON output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{med_boundary, GainRecord};
use crate::channel::{CellPair, Copies, DetectionModel, NoiseKind, SourceKind, SourceSpec};
use crate::decision::{exact_error_probability_for, DecisionRule};
use crate::dist::DEFAULT_TRUNC_TOL;
use crate::error::{Error, Result};
use crate::gaussian::gaussian_error_probability_for;
use crate::simulate::{entropy_uncertainty, monte_carlo_error};

pub const CSV_HEADER: &str =
    "tau0,tau1,N,eta_s,eta_i,nu_e,mode,p_err_q,p_err_c_opt,p_err_c_phc,gain_opt,gain_phc,med_tau0,uncertainty,status";

/// Photon number above which `auto` mode switches to the normal approximation.
pub const DEFAULT_GAUSSIAN_ABOVE: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Exact summation below `gaussian_above`, normal approximation above it.
    #[default]
    Auto,
    Exact,
    Gaussian,
    #[serde(rename = "montecarlo")]
    MonteCarlo,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Auto => "auto",
            Self::Exact => "exact",
            Self::Gaussian => "gaussian",
            Self::MonteCarlo => "montecarlo",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "exact" => Ok(Self::Exact),
            "gaussian" => Ok(Self::Gaussian),
            "montecarlo" | "monte_carlo" => Ok(Self::MonteCarlo),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected auto, exact, gaussian or montecarlo)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
    /// Logarithmic in the distance `τ1 − τ0`, dense towards `τ1`.
    LogGap,
}

/// Either explicit values or `steps` points between `start` and `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values {
        values: Vec<f64>,
    },
    Range {
        start: f64,
        stop: f64,
        steps: usize,
        #[serde(default)]
        spacing: Spacing,
    },
}

impl Grid {
    /// Grid points in ascending order. `reference` is the upper end used by
    /// `log_gap` spacing; `steps_override` replaces the step count of ranges.
    pub fn points(&self, reference: f64, steps_override: Option<usize>) -> Result<Vec<f64>> {
        let mut pts = match self {
            Self::Values { values } => values.clone(),
            Self::Range { start, stop, steps, spacing } => {
                let steps = steps_override.unwrap_or(*steps);
                if steps == 0 {
                    return Err(Error::Config("grid needs at least one step".into()));
                }
                let frac = |k: usize| if steps == 1 { 0.0 } else { k as f64 / (steps - 1) as f64 };
                let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                match spacing {
                    Spacing::Linear => (0..steps).map(|k| lerp(*start, *stop, frac(k))).collect(),
                    Spacing::Log => {
                        if !(*start > 0.0 && *stop > 0.0) {
                            return Err(Error::Config("log spacing needs positive endpoints".into()));
                        }
                        (0..steps).map(|k| lerp(start.ln(), stop.ln(), frac(k)).exp()).collect()
                    }
                    Spacing::LogGap => {
                        let (ga, gb) = (reference - start, reference - stop);
                        if !(ga > 0.0 && gb > 0.0) {
                            return Err(Error::Config(format!("log_gap spacing needs endpoints below {reference}")));
                        }
                        (0..steps).map(|k| reference - lerp(ga.ln(), gb.ln(), frac(k)).exp()).collect()
                    }
                }
            }
        };
        if pts.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        if pts.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid values must be finite".into()));
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        Ok(pts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    #[serde(default = "one")]
    pub eta_s: f64,
    #[serde(default = "one")]
    pub eta_i: f64,
    #[serde(default)]
    pub nu_e: f64,
    #[serde(default)]
    pub noise_kind: NoiseKind,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { eta_s: 1.0, eta_i: 1.0, nu_e: 0.0, noise_kind: NoiseKind::default() }
    }
}

impl DetectConfig {
    pub fn model(&self) -> Result<DetectionModel> {
        DetectionModel::new(self.eta_s, self.eta_i, self.nu_e, self.noise_kind)
    }
}

fn one() -> f64 {
    1.0
}

fn default_frames() -> usize {
    10_000
}

fn default_tol() -> f64 {
    DEFAULT_TRUNC_TOL
}

fn default_gaussian_above() -> f64 {
    DEFAULT_GAUSSIAN_ABOVE
}

fn default_source() -> SourceKind {
    SourceKind::Tmsv
}

fn default_copies() -> Copies {
    Copies::Infinite
}

/// One sweep, as read from a recipe file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub mode: EvalMode,
    pub tau0: Grid,
    #[serde(default = "one")]
    pub tau1: f64,
    /// Total mean photon number `N`.
    #[serde(rename = "N")]
    pub energy: Grid,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default = "default_source")]
    pub source: SourceKind,
    #[serde(default = "default_copies")]
    pub copies: Copies,
    #[serde(default = "default_frames")]
    pub n_frames: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub trunc_tol: f64,
    #[serde(default = "default_gaussian_above")]
    pub gaussian_above: f64,
    /// Step count for both ranged axes under `--full`.
    #[serde(default)]
    pub full_steps: Option<usize>,
    #[serde(default)]
    pub full: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn steps_override(&self) -> Option<usize> {
        if self.full {
            self.full_steps
        } else {
            None
        }
    }

    pub fn tau0_points(&self) -> Result<Vec<f64>> {
        self.tau0.points(self.tau1, self.steps_override())
    }

    pub fn energy_points(&self) -> Result<Vec<f64>> {
        if matches!(self.energy, Grid::Range { spacing: Spacing::LogGap, .. }) {
            return Err(Error::Config("log_gap spacing applies to tau0 only".into()));
        }
        self.energy.points(f64::INFINITY, self.steps_override())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0 && self.tau1 <= 1.0) {
            return Err(Error::Config(format!("tau1 must lie in (0, 1], got {}", self.tau1)));
        }
        for t in self.tau0_points()? {
            if !(0.0..self.tau1).contains(&t) {
                return Err(Error::Config(format!("tau0 grid must lie in [0, tau1), got {t}")));
            }
        }
        for n in self.energy_points()? {
            if !(n >= 0.0) {
                return Err(Error::Config(format!("N grid must be non-negative, got {n}")));
            }
        }
        self.detect.model()?;
        if !(self.trunc_tol > 0.0 && self.trunc_tol < 1.0) {
            return Err(Error::Config(format!("trunc_tol must lie in (0, 1), got {}", self.trunc_tol)));
        }
        if self.mode == EvalMode::MonteCarlo && self.n_frames == 0 {
            return Err(Error::Config("montecarlo mode needs n_frames ≥ 1".into()));
        }
        if self.source == SourceKind::Tmsv && self.copies == Copies::Finite(0) {
            return Err(Error::Config("copies must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Grid points in output order: `N` outer, `τ0` inner.
    pub fn points(&self) -> Result<Vec<(f64, f64)>> {
        let taus = self.tau0_points()?;
        let ns = self.energy_points()?;
        Ok(ns.iter().flat_map(|&n| taus.iter().map(move |&t| (t, n))).collect())
    }
}

/// One output row. Failed points keep their coordinates, carry NaN in the
/// values that could not be computed, and an error code in `status`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub tau0: f64,
    pub tau1: f64,
    #[serde(rename = "N")]
    pub n: f64,
    pub eta_s: f64,
    pub eta_i: f64,
    pub nu_e: f64,
    pub mode: String,
    pub p_err_q: f64,
    pub p_err_c_opt: f64,
    pub p_err_c_phc: f64,
    pub gain_opt: f64,
    pub gain_phc: f64,
    pub med_tau0: f64,
    pub uncertainty: f64,
    pub status: String,
}

impl SweepRecord {
    pub fn from_gain(rec: &GainRecord, mode: EvalMode) -> Self {
        Self {
            tau0: rec.cell.tau0(),
            tau1: rec.cell.tau1(),
            n: rec.source.energy,
            eta_s: rec.detect.eta_s,
            eta_i: rec.detect.eta_i,
            nu_e: rec.detect.nu_e,
            mode: mode.as_str().into(),
            p_err_q: rec.p_err_quantum,
            p_err_c_opt: rec.p_err_classical_opt,
            p_err_c_phc: rec.p_err_classical_phc,
            gain_opt: rec.gain_vs_opt,
            gain_phc: rec.gain_vs_phc,
            med_tau0: med_or_nan(rec.source.energy),
            uncertainty: rec.uncertainty,
            status: "ok".into(),
        }
    }

    fn failed(tau0: f64, tau1: f64, n: f64, detect: &DetectConfig, mode: EvalMode, err: &Error) -> Self {
        Self {
            tau0,
            tau1,
            n,
            eta_s: detect.eta_s,
            eta_i: detect.eta_i,
            nu_e: detect.nu_e,
            mode: mode.as_str().into(),
            p_err_q: f64::NAN,
            p_err_c_opt: f64::NAN,
            p_err_c_phc: f64::NAN,
            gain_opt: f64::NAN,
            gain_phc: f64::NAN,
            med_tau0: med_or_nan(n),
            uncertainty: f64::NAN,
            status: err.code().into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn med_or_nan(n: f64) -> f64 {
    med_boundary(n).unwrap_or(f64::NAN)
}

/// Independent Monte Carlo seed for grid point `index`.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    // SplitMix64 finalizer
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn exact_or_gaussian(
    mode: EvalMode,
    source: &SourceSpec,
    cell: &CellPair,
    detect: &DetectionModel,
    cfg: &SweepConfig,
) -> Result<(EvalMode, f64)> {
    let exact = || exact_error_probability_for(source, cell, detect, cfg.trunc_tol).map(|p| (EvalMode::Exact, p.value));
    let gaussian = || gaussian_error_probability_for(source, cell, detect).map(|p| (EvalMode::Gaussian, p));
    match mode {
        EvalMode::Exact => exact(),
        EvalMode::Gaussian => gaussian(),
        _ if source.energy <= cfg.gaussian_above => exact(),
        // outside the normal model's range (small means, singular covariance)
        _ => gaussian().or_else(|e| if matches!(e, Error::InvalidParameter(_)) { exact() } else { Err(e) }),
    }
}

/// Evaluates one grid point.
pub fn evaluate_point(cfg: &SweepConfig, tau0: f64, n: f64, index: usize) -> SweepRecord {
    let attempt = || -> Result<(GainRecord, EvalMode)> {
        let cell = CellPair::new(tau0, cfg.tau1)?;
        let source = SourceSpec { kind: cfg.source, energy: n, copies: cfg.copies };
        source.validate()?;
        let detect = cfg.detect.model()?;
        match cfg.mode {
            EvalMode::MonteCarlo => {
                let rule =
                    DecisionRule::maximum_likelihood(&source, &cell, &detect, cfg.trunc_tol, cfg.gaussian_above)?;
                let est = monte_carlo_error(&source, &cell, &detect, &rule, cfg.n_frames, point_seed(cfg.seed, index))?;
                let rec = GainRecord::new(cell, source, detect, est.p_hat.min(0.5), entropy_uncertainty(&est))?;
                Ok((rec, EvalMode::MonteCarlo))
            }
            mode => {
                let (used, p) = exact_or_gaussian(mode, &source, &cell, &detect, cfg)?;
                Ok((GainRecord::new(cell, source, detect, p, 0.0)?, used))
            }
        }
    };
    match attempt() {
        Ok((rec, used)) => SweepRecord::from_gain(&rec, used),
        Err(e) => SweepRecord::failed(tau0, cfg.tau1, n, &cfg.detect, cfg.mode, &e),
    }
}

/// Evaluates every grid point. Per-point failures are recorded in the row;
/// only an invalid configuration aborts.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let points = cfg.points()?;
    Ok(points.par_iter().enumerate().map(|(k, &(t, n))| evaluate_point(cfg, t, n, k)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(Error::Config(format!("unknown format {s:?} (expected csv or json)"))),
        }
    }
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.16e}")
    }
}

fn record_fields(r: &SweepRecord) -> [String; 15] {
    [
        fmt_float(r.tau0),
        fmt_float(r.tau1),
        fmt_float(r.n),
        fmt_float(r.eta_s),
        fmt_float(r.eta_i),
        fmt_float(r.nu_e),
        r.mode.clone(),
        fmt_float(r.p_err_q),
        fmt_float(r.p_err_c_opt),
        fmt_float(r.p_err_c_phc),
        fmt_float(r.gain_opt),
        fmt_float(r.gain_phc),
        fmt_float(r.med_tau0),
        fmt_float(r.uncertainty),
        r.status.clone(),
    ]
}

pub fn to_csv_string(records: &[SweepRecord]) -> String {
    let mut out = String::with_capacity(256 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&record_fields(r).join(","));
        out.push('\n');
    }
    out
}

pub fn to_json_string(records: &[SweepRecord]) -> String {
    let names: Vec<&str> = CSV_HEADER.split(',').collect();
    let rows: Vec<serde_json::Value> = records
        .iter()
        .map(|r| {
            let mut obj = serde_json::Map::new();
            for (name, field) in names.iter().zip(record_fields(r)) {
                let value = if *name == "mode" || *name == "status" {
                    serde_json::Value::String(field)
                } else {
                    serde_json::Number::from_str(&field).map_or(serde_json::Value::Null, serde_json::Value::Number)
                };
                obj.insert((*name).to_owned(), value);
            }
            serde_json::Value::Object(obj)
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&rows).unwrap_or_else(|_| "[]".into());
    text.push('\n');
    text
}

/// Writes records as CSV or JSON.
pub fn emit_results(records: &[SweepRecord], format: OutputFormat, path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    let text = match format {
        OutputFormat::Csv => to_csv_string(records),
        OutputFormat::Json => to_json_string(records),
    };
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(text.as_bytes()).map_err(io_err)
}

pub fn parse_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let bad = |e: csv::Error| Error::Config(format!("malformed results CSV: {e}"));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(bad)?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Config(format!("unexpected results header: {}", header.join(","))));
    }
    reader.deserialize().map(|r| r.map_err(bad)).collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_csv(&text)
}

pub fn parse_json(text: &str) -> Result<Vec<SweepRecord>> {
    let rows: Vec<serde_json::Map<String, serde_json::Value>> =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed results JSON: {e}")))?;
    let num = |obj: &serde_json::Map<String, serde_json::Value>, k: &str| -> Result<f64> {
        match obj.get(k) {
            Some(serde_json::Value::Null) => Ok(f64::NAN),
            Some(serde_json::Value::Number(n)) => {
                n.as_str().parse().map_err(|_| Error::Config(format!("field {k}: bad number {n}")))
            }
            _ => Err(Error::Config(format!("field {k} missing or not a number"))),
        }
    };
    let text_field = |obj: &serde_json::Map<String, serde_json::Value>, k: &str| -> Result<String> {
        obj.get(k)
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| Error::Config(format!("field {k} missing")))
    };
    rows.iter()
        .map(|o| {
            Ok(SweepRecord {
                tau0: num(o, "tau0")?,
                tau1: num(o, "tau1")?,
                n: num(o, "N")?,
                eta_s: num(o, "eta_s")?,
                eta_i: num(o, "eta_i")?,
                nu_e: num(o, "nu_e")?,
                mode: text_field(o, "mode")?,
                p_err_q: num(o, "p_err_q")?,
                p_err_c_opt: num(o, "p_err_c_opt")?,
                p_err_c_phc: num(o, "p_err_c_phc")?,
                gain_opt: num(o, "gain_opt")?,
                gain_phc: num(o, "gain_phc")?,
                med_tau0: num(o, "med_tau0")?,
                uncertainty: num(o, "uncertainty")?,
                status: text_field(o, "status")?,
            })
        })
        .collect()
}
