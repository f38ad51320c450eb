mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairquant::dataset::SamplerMode;
use fairquant::quant::PrecisionSpec;
use fairquant::Exec;

/// Quantization fairness lab: train, quantize, audit and diagnose small
/// grouped classifiers.
#[derive(Debug, Parser)]
#[command(name = "fairquant", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a base model for one seed and save its checkpoint and trace.
    Train(TrainArgs),
    /// Quantize a checkpoint at one or more precisions.
    Quantize(QuantizeArgs),
    /// Audit a model on the test split of a seed.
    Audit(EvalArgs),
    /// Gradient norms and top Hessian eigenvalues per group.
    Diagnose(EvalArgs),
    /// Train, quantize, audit and diagnose every seed × precision cell.
    Sweep(SweepArgs),
    /// Compare PTQ, U-O+WCR+PTQ, MPQAT and Fair QAT at the target precision.
    Mitigate(MitigateArgs),
    /// Write the train and test splits of a seed as CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (JSON); the bundled benchmark when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; overrides the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Fairness {
    /// Group resampling: none, undersample, oversample or u_o.
    #[arg(long)]
    sampler: Option<SamplerMode>,
    /// Per-class loss weights, comma separated.
    #[arg(long, value_parser = parse_weights)]
    class_weights: Option<Weights>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    fairness: Fairness,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    /// Network checkpoint to quantize.
    #[arg(long)]
    model: PathBuf,
    /// Comma separated precisions, e.g. fp16,int8,int4.
    #[arg(long, value_parser = parse_precisions)]
    precisions: Precisions,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Network checkpoint or quantized model.
    #[arg(long)]
    model: PathBuf,
    /// Full-precision model for drift metrics (audit only).
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Comma separated precisions; overrides the configured list.
    #[arg(long, value_parser = parse_precisions)]
    precisions: Option<Precisions>,
}

#[derive(Debug, Args)]
struct MitigateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    fairness: Fairness,
    /// Target precision of the arms; only the first entry is used.
    #[arg(long, value_parser = parse_precisions)]
    precisions: Option<Precisions>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone)]
pub struct Precisions(pub Vec<PrecisionSpec>);

#[derive(Debug, Clone)]
pub struct Weights(pub Vec<f64>);

fn parse_precisions(s: &str) -> Result<Precisions, String> {
    PrecisionSpec::parse_list(s).map(Precisions).map_err(|e| e.to_string())
}

fn parse_weights(s: &str) -> Result<Weights, String> {
    s.split(',')
        .map(|w| {
            let v: f64 = w.trim().parse().map_err(|_| format!("bad class weight {w:?}"))?;
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(format!("class weight {w:?} must be finite and >= 0"))
            }
        })
        .collect::<Result<_, _>>()
        .map(Weights)
}

/// Bad invocation or configuration; exits with code 2.
#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl fmt::Display) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

/// How a command finished when it did not error out.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some cells failed; the rest of the results were written.
    Partial,
}

fn exec_from_env() -> anyhow::Result<Exec> {
    let Ok(raw) = std::env::var("FAIRQUANT_THREADS") else {
        return Ok(Exec::Parallel);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| usage(format!("FAIRQUANT_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 1 {
        return Ok(Exec::Sequential);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow::anyhow!("cannot start thread pool: {e}"))?;
    Ok(Exec::Parallel)
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let exec = exec_from_env()?;
    match cli.command {
        Command::Train(a) => commands::train(&a.common, &a.fairness),
        Command::Quantize(a) => commands::quantize(&a.model, &a.precisions.0, a.seed, &a.out),
        Command::Audit(a) => commands::audit(&a.common, &a.model, a.reference.as_deref()),
        Command::Diagnose(a) => commands::diagnose(&a.common, &a.model, exec),
        Command::Sweep(a) => commands::sweep(&a.common, a.precisions.map(|p| p.0), exec),
        Command::Mitigate(a) => commands::mitigate(&a.common, &a.fairness, a.precisions.map(|p| p.0), exec),
        Command::GenData(a) => commands::gen_data(&a.common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
