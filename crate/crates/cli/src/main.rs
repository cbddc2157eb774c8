use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use qread_core::decision::DecisionRule;
use qread_core::simulate::{estimate_error, sample_frames, write_frame_dump};
use qread_core::sweep::{
    emit_results, run_sweep, to_csv_string, to_json_string, DetectConfig, EvalMode, Grid, OutputFormat, SweepConfig,
    SweepRecord, DEFAULT_GAUSSIAN_ABOVE,
};
use qread_core::{Bit, CellPair, Copies, NoiseKind, SourceKind, SourceSpec};

#[derive(Parser)]
#[command(name = "qread", version, about = "Photon-counting quantum reading simulator")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parameter sweep from a recipe file.
    Sweep(SweepArgs),
    /// Evaluate a single (τ0, N) point.
    Point(PointArgs),
    /// Sample detector frames and write them as CSV.
    Simulate(SimulateArgs),
    /// Run the cross-checks between independent evaluation routes.
    Validate,
}

#[derive(Args)]
struct OutputArgs {
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<OutputFormat>,
    /// Exit with status 2 if any point failed.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<EvalMode>,
    #[arg(long)]
    frames: Option<usize>,
    /// Use the recipe's fine grid.
    #[arg(long)]
    full: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct Physical {
    #[arg(long)]
    tau0: f64,
    #[arg(long, default_value_t = 1.0)]
    tau1: f64,
    /// Total mean photon number.
    #[arg(long = "N", alias = "energy")]
    energy: f64,
    #[arg(long, default_value_t = 1.0)]
    eta_s: f64,
    #[arg(long, default_value_t = 1.0)]
    eta_i: f64,
    /// Electronic-noise variance per arm (mean dark count for poisson_dark).
    #[arg(long, default_value_t = 0.0)]
    nu_e: f64,
    #[arg(long, default_value = "gaussian_additive", value_parser = parse_noise)]
    noise: NoiseKind,
    #[arg(long, default_value = "tmsv", value_parser = parse_source)]
    source: SourceKind,
    /// Number of signal-idler modes, or `inf`.
    #[arg(long, default_value = "inf", value_parser = parse_copies)]
    copies: Copies,
}

impl Physical {
    fn detect(&self) -> DetectConfig {
        DetectConfig { eta_s: self.eta_s, eta_i: self.eta_i, nu_e: self.nu_e, noise_kind: self.noise }
    }
}

#[derive(Args)]
struct PointArgs {
    #[command(flatten)]
    physical: Physical,
    #[arg(long, value_parser = parse_mode, default_value = "auto")]
    mode: EvalMode,
    #[arg(long, default_value_t = 10_000)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    physical: Physical,
    /// Frames per hypothesis.
    #[arg(long, default_value_t = 10_000)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse().map_err(|e: qread_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<EvalMode, String> {
    s.parse().map_err(|e: qread_core::Error| e.to_string())
}

fn parse_noise(s: &str) -> Result<NoiseKind, String> {
    match s {
        "none" => Ok(NoiseKind::None),
        "gaussian_additive" => Ok(NoiseKind::GaussianAdditive),
        "poisson_dark" => Ok(NoiseKind::PoissonDark),
        _ => Err(format!("unknown noise kind {s:?} (none, gaussian_additive, poisson_dark)")),
    }
}

fn parse_source(s: &str) -> Result<SourceKind, String> {
    match s {
        "tmsv" => Ok(SourceKind::Tmsv),
        "classical_poisson" | "classical" => Ok(SourceKind::ClassicalPoisson),
        _ => Err(format!("unknown source {s:?} (tmsv, classical_poisson)")),
    }
}

fn parse_copies(s: &str) -> Result<Copies, String> {
    if s == "inf" || s == "infinite" {
        return Ok(Copies::Infinite);
    }
    s.parse().map(Copies::Finite).map_err(|_| format!("copies must be a positive integer or inf, got {s:?}"))
}

fn format_for(explicit: Option<OutputFormat>, out: Option<&Path>) -> OutputFormat {
    explicit.unwrap_or_else(|| match out.and_then(Path::extension).and_then(|e| e.to_str()) {
        Some("json") => OutputFormat::Json,
        _ => OutputFormat::Csv,
    })
}

fn write_records(records: &[SweepRecord], output: &OutputArgs, out: Option<&Path>) -> Result<ExitCode> {
    let format = format_for(output.format, out);
    match out {
        Some(path) => emit_results(records, format, path)?,
        None => {
            let text = match format {
                OutputFormat::Csv => to_csv_string(records),
                OutputFormat::Json => to_json_string(records),
            };
            std::io::stdout().lock().write_all(text.as_bytes())?;
        }
    }
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} points failed", records.len());
        if output.strict {
            return Ok(ExitCode::from(2));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: &SweepArgs) -> Result<ExitCode> {
    let mut cfg = SweepConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(frames) = args.frames {
        cfg.n_frames = frames;
    }
    cfg.full |= args.full;
    let records = run_sweep(&cfg).with_context(|| format!("sweep {}", args.config.display()))?;
    let out = args.output.out.clone().or_else(|| cfg.out.clone());
    write_records(&records, &args.output, out.as_deref())
}

fn point(args: &PointArgs) -> Result<ExitCode> {
    let p = &args.physical;
    let cfg = SweepConfig {
        name: None,
        mode: args.mode,
        tau0: Grid::Values { values: vec![p.tau0] },
        tau1: p.tau1,
        energy: Grid::Values { values: vec![p.energy] },
        detect: p.detect(),
        source: p.source,
        copies: p.copies,
        n_frames: args.frames,
        seed: args.seed,
        trunc_tol: qread_core::dist::DEFAULT_TRUNC_TOL,
        gaussian_above: DEFAULT_GAUSSIAN_ABOVE,
        full_steps: None,
        full: false,
        out: None,
    };
    let records = run_sweep(&cfg)?;
    write_records(&records, &args.output, args.output.out.as_deref())
}

fn simulate(args: &SimulateArgs) -> Result<ExitCode> {
    let p = &args.physical;
    let cell = CellPair::new(p.tau0, p.tau1)?;
    let source = SourceSpec { kind: p.source, energy: p.energy, copies: p.copies };
    let detect = p.detect().model()?;
    let b0 = sample_frames(&source, &cell, Bit::Zero, &detect, args.frames, args.seed)?;
    let b1 = sample_frames(&source, &cell, Bit::One, &detect, args.frames, args.seed)?;
    write_frame_dump(&args.out, &[&b0, &b1])?;
    let rule = DecisionRule::maximum_likelihood(
        &source,
        &cell,
        &detect,
        qread_core::dist::DEFAULT_TRUNC_TOL,
        DEFAULT_GAUSSIAN_ABOVE,
    );
    match rule.and_then(|r| estimate_error(&b0, &b1, &r)) {
        Ok(est) => eprintln!(
            "{} frames written; empirical error {:.6e} ± {:.2e}",
            b0.count() + b1.count(),
            est.p_hat,
            est.stderr
        ),
        Err(e) => eprintln!("{} frames written; no decoder: {e}", b0.count() + b1.count()),
    }
    Ok(ExitCode::SUCCESS)
}

fn validate() -> ExitCode {
    let checks = qread_core::validate::run_all();
    let mut all = true;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.passed;
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be ≥ 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Point(a) => point(a),
        Command::Simulate(a) => simulate(a),
        Command::Validate => Ok(validate()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
