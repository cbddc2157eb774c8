//! Monte Carlo emulation of the readout experiment: synthetic frames,
//! per-frame decoding and empirical error rates with uncertainties.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::bounds::{binary_entropy, binary_entropy_slope, GainRecord};
use crate::channel::{Bit, CellPair, Copies, DetectionModel, NoiseKind, SourceKind, SourceSpec};
use crate::decision::{Decide, DecisionRule, Outcome};
use crate::error::{Error, Result};

/// Words of generator output reserved per frame.
const FRAME_STRIDE: u128 = 1 << 32;

const BOOTSTRAP_DRAWS: usize = 1000;

/// Frames recorded under one known cell value.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub outcomes: Vec<Outcome>,
    pub true_bit: Bit,
    pub seed: u64,
}

impl FrameBatch {
    pub fn count(&self) -> usize {
        self.outcomes.len()
    }
}

/// Per-arm count samplers for one hypothesis.
enum PairSampler {
    /// Independent Poisson `c`, `a`, `b`: `n_S = c + a`, `n_I = c + b`.
    PoissonLimit {
        both: Option<Poisson<f64>>,
        signal: Option<Poisson<f64>>,
        idler: Option<Poisson<f64>>,
    },
    /// Gamma–Poisson pair number, then independent thinning of each arm.
    FiniteM {
        pairs: Option<Gamma<f64>>,
        signal_t: f64,
        idler_t: f64,
    },
    Coherent(Option<Poisson<f64>>),
}

fn poisson(mean: f64) -> Result<Option<Poisson<f64>>> {
    if mean == 0.0 {
        return Ok(None);
    }
    Poisson::new(mean).map(Some).map_err(|e| Error::invalid(format!("Poisson mean {mean}: {e}")))
}

fn draw(d: &Option<Poisson<f64>>, rng: &mut ChaCha8Rng) -> i64 {
    d.as_ref().map_or(0, |p| p.sample(rng) as i64)
}

fn thin(m: u64, p: f64, rng: &mut ChaCha8Rng) -> i64 {
    if m == 0 || p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return m as i64;
    }
    Binomial::new(m, p).map_or(0, |b| b.sample(rng) as i64)
}

impl PairSampler {
    fn new(source: &SourceSpec, tau: f64, detect: &DetectionModel) -> Result<Self> {
        let n = source.energy;
        let s = detect.eta_s * tau;
        let i = detect.eta_i;
        Ok(match (source.kind, source.copies) {
            (SourceKind::ClassicalPoisson, _) => Self::Coherent(poisson(n * s)?),
            (SourceKind::Tmsv, Copies::Infinite) => Self::PoissonLimit {
                both: poisson(n * s * i)?,
                signal: poisson(n * s * (1.0 - i))?,
                idler: poisson(n * (1.0 - s) * i)?,
            },
            (SourceKind::Tmsv, Copies::Finite(m)) => {
                let pairs = if n == 0.0 {
                    None
                } else {
                    Some(
                        Gamma::new(m as f64, n / m as f64)
                            .map_err(|e| Error::invalid(format!("pair number law: {e}")))?,
                    )
                };
                Self::FiniteM { pairs, signal_t: s, idler_t: i }
            }
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (i64, i64) {
        match self {
            Self::Coherent(p) => (draw(p, rng), 0),
            Self::PoissonLimit { both, signal, idler } => {
                let c = draw(both, rng);
                let a = draw(signal, rng);
                let b = draw(idler, rng);
                (c + a, c + b)
            }
            Self::FiniteM { pairs, signal_t, idler_t } => {
                let m = match pairs {
                    None => 0,
                    Some(g) => {
                        let rate = g.sample(rng);
                        if rate > 0.0 {
                            Poisson::new(rate).map_or(0, |p| p.sample(rng) as u64)
                        } else {
                            0
                        }
                    }
                };
                (thin(m, *signal_t, rng), thin(m, *idler_t, rng))
            }
        }
    }
}

enum NoiseSampler {
    None,
    /// `round(σZ)`, the rounded normal used by the likelihood models.
    Gaussian(f64),
    Dark(Option<Poisson<f64>>),
}

impl NoiseSampler {
    fn new(detect: &DetectionModel) -> Result<Self> {
        if !detect.has_noise() {
            return Ok(Self::None);
        }
        Ok(match detect.noise_kind {
            NoiseKind::None => Self::None,
            NoiseKind::GaussianAdditive => Self::Gaussian(detect.nu_e.sqrt()),
            NoiseKind::PoissonDark => Self::Dark(poisson(detect.nu_e)?),
        })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> i64 {
        match self {
            Self::None => 0,
            Self::Gaussian(sigma) => {
                let z: f64 = rng.sample(StandardNormal);
                (sigma * z).round() as i64
            }
            Self::Dark(p) => draw(p, rng),
        }
    }
}

/// Generator for frame `index` of hypothesis `u`: one ChaCha stream per
/// hypothesis, one fixed block of the keystream per frame.
fn frame_rng(base: &ChaCha8Rng, index: u64) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_word_pos(u128::from(index) * FRAME_STRIDE);
    rng
}

/// Draws `n_frames` outcomes under hypothesis `u`. Frame `k` depends only on
/// `(seed, u, k)`, so the batch is identical for any thread count.
pub fn sample_frames(
    source: &SourceSpec,
    cell: &CellPair,
    u: Bit,
    detect: &DetectionModel,
    n_frames: usize,
    seed: u64,
) -> Result<FrameBatch> {
    source.validate()?;
    detect.validate()?;
    if n_frames == 0 {
        return Err(Error::invalid("need at least one frame"));
    }
    let pairs = PairSampler::new(source, cell.tau(u), detect)?;
    let noise = NoiseSampler::new(detect)?;
    let single_arm = source.kind == SourceKind::ClassicalPoisson;
    let mut base = ChaCha8Rng::seed_from_u64(seed);
    base.set_stream(u.index() as u64);
    let outcomes = (0..n_frames as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = frame_rng(&base, k);
            let (s, i) = pairs.sample(&mut rng);
            let ns = s + noise.sample(&mut rng);
            let ni = if single_arm { i } else { i + noise.sample(&mut rng) };
            Outcome::new(ns, ni)
        })
        .collect();
    Ok(FrameBatch { outcomes, true_bit: u, seed })
}

/// Empirical error rate of a decoder over two labelled batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    /// Frames per hypothesis (the smaller batch if they differ).
    pub n_frames: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub errors0: usize,
    pub errors1: usize,
    pub frames0: usize,
    pub frames1: usize,
}

/// Wilson score interval for a proportion `p` observed over `n` trials.
pub fn wilson_interval(p: f64, n: f64, z: f64) -> (f64, f64) {
    if n <= 0.0 {
        return (0.0, 1.0);
    }
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// `p_hat = ½(err0/n0 + err1/n1)`, binomial standard error per batch and a
/// Wilson 95% interval at the effective sample size.
pub fn estimate_error(batch0: &FrameBatch, batch1: &FrameBatch, rule: &DecisionRule) -> Result<ErrorEstimate> {
    if batch0.true_bit != Bit::Zero || batch1.true_bit != Bit::One {
        return Err(Error::invalid("batches must be recorded under hypotheses 0 and 1, in that order"));
    }
    let count = |b: &FrameBatch| b.outcomes.par_iter().filter(|o| rule.decide(**o) != b.true_bit).count();
    Ok(error_estimate_from_counts(count(batch0), batch0.count(), count(batch1), batch1.count()))
}

pub fn error_estimate_from_counts(errors0: usize, frames0: usize, errors1: usize, frames1: usize) -> ErrorEstimate {
    let (n0, n1) = (frames0 as f64, frames1 as f64);
    let (r0, r1) = (errors0 as f64 / n0, errors1 as f64 / n1);
    let p_hat = 0.5 * (r0 + r1);
    let stderr = 0.5 * (r0 * (1.0 - r0) / n0 + r1 * (1.0 - r1) / n1).sqrt();
    let n_eff = if stderr > 0.0 { (p_hat * (1.0 - p_hat) / (stderr * stderr)).min(n0 + n1) } else { n0 + n1 };
    let (ci_low, ci_high) = wilson_interval(p_hat, n_eff, 1.959_963_984_540_054);
    ErrorEstimate { p_hat, stderr, n_frames: frames0.min(frames1), ci_low, ci_high, errors0, errors1, frames0, frames1 }
}

/// Samples both hypotheses and decodes them with `rule`.
pub fn monte_carlo_error(
    source: &SourceSpec,
    cell: &CellPair,
    detect: &DetectionModel,
    rule: &DecisionRule,
    n_frames: usize,
    seed: u64,
) -> Result<ErrorEstimate> {
    let b0 = sample_frames(source, cell, Bit::Zero, detect, n_frames, seed)?;
    let b1 = sample_frames(source, cell, Bit::One, detect, n_frames, seed)?;
    estimate_error(&b0, &b1, rule)
}

fn entropy_of_estimate(p: f64) -> f64 {
    binary_entropy(p.clamp(0.0, 0.5)).unwrap_or(1.0)
}

/// One standard deviation of `H(p_hat)`.
///
/// Delta method away from the edges; near `p_hat ∈ {0, ½}` the slope of `H`
/// is zero or infinite, so the spread of `H` over a parametric bootstrap of
/// the error counts is used instead. Bootstrap rates are smoothed by half a
/// count so that a batch without errors still varies.
pub fn entropy_uncertainty(est: &ErrorEstimate) -> f64 {
    let p = est.p_hat;
    let near_edge = est.stderr == 0.0 || p < 3.0 * est.stderr || 0.5 - p < 3.0 * est.stderr;
    if !near_edge {
        return binary_entropy_slope(p).abs() * est.stderr;
    }
    let seed = (est.errors0 as u64) << 32 ^ est.errors1 as u64 ^ (est.frames0 as u64).rotate_left(17);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = |e: usize, n: usize| (e as f64 + 0.5) / (n as f64 + 1.0);
    let (q0, q1) = (rate(est.errors0, est.frames0), rate(est.errors1, est.frames1));
    let (b0, b1) = match (Binomial::new(est.frames0 as u64, q0), Binomial::new(est.frames1 as u64, q1)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return 0.0,
    };
    let draws: Vec<f64> = (0..BOOTSTRAP_DRAWS)
        .map(|_| {
            let r0 = b0.sample(&mut rng) as f64 / est.frames0 as f64;
            let r1 = b1.sample(&mut rng) as f64 / est.frames1 as f64;
            entropy_of_estimate(0.5 * (r0 + r1))
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / (draws.len() - 1) as f64;
    var.sqrt()
}

/// Gain of the empirical error rate over both classical benchmarks.
///
/// An estimate above ½ (possible from sampling noise alone) is reported as ½.
/// The uncertainty is one standard deviation of `H(p_hat)`; the classical
/// benchmarks are exact, so it applies to both gains.
pub fn gain_with_uncertainty(
    est: &ErrorEstimate,
    cell: &CellPair,
    source: &SourceSpec,
    detect: &DetectionModel,
) -> Result<GainRecord> {
    GainRecord::new(*cell, *source, *detect, est.p_hat.min(0.5), entropy_uncertainty(est))
}

pub const FRAME_DUMP_HEADER: &str = "frame_index,n_s,n_i,true_bit";

/// Writes batches as CSV rows `frame_index,n_s,n_i,true_bit`.
pub fn write_frame_dump(path: &Path, batches: &[&FrameBatch]) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(out, "{FRAME_DUMP_HEADER}").map_err(io_err)?;
    for batch in batches {
        let bit = u8::from(batch.true_bit);
        for (k, o) in batch.outcomes.iter().enumerate() {
            writeln!(out, "{k},{},{},{bit}", o.n_s, o.n_i).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

/// One row of a frame dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpedFrame {
    pub frame_index: u64,
    pub outcome: Outcome,
    pub true_bit: Bit,
}

pub fn read_frame_dump(path: &Path) -> Result<Vec<DumpedFrame>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header.join(",") != FRAME_DUMP_HEADER {
        return Err(Error::invalid(format!("{}: unexpected frame-dump header {:?}", path.display(), header)));
    }
    let mut frames = Vec::new();
    for rec in reader.deserialize::<(u64, i64, i64, u8)>() {
        let (frame_index, n_s, n_i, bit) = rec.map_err(csv_err)?;
        let true_bit = match bit {
            0 => Bit::Zero,
            1 => Bit::One,
            b => return Err(Error::invalid(format!("{}: true_bit must be 0 or 1, got {b}", path.display()))),
        };
        frames.push(DumpedFrame { frame_index, outcome: Outcome::new(n_s, n_i), true_bit });
    }
    Ok(frames)
}
