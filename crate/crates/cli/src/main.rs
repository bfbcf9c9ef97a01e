//! `fadec`: calibration, inference, workload analysis and schedule
//! simulation for the fixed-point depth pipeline.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{existing, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::Output;

#[derive(Parser, Debug)]
#[command(name = "fadec", version, about = "Fixed-point multi-view depth estimation toolkit")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory root.
    #[arg(long, global = true, env = "FADEC_OUT_DIR")]
    out: Option<PathBuf>,

    /// Seed for every synthetic input.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print a machine-readable summary on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded model and a synthetic scene.
    Synth(SynthArgs),
    /// Fix activation and parameter exponents from float runs.
    Calibrate(CalibrateArgs),
    /// Run the pipeline over a scene and write depth maps plus metrics.
    Infer(InferArgs),
    /// Operator census, multiplication shares and the HW/SW plan.
    Analyze(AnalyzeArgs),
    /// Simulate the PL/CPU pipeline for a stage profile.
    Schedule(ScheduleArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Reference,
    Fast,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Float,
    Quant,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Frames in the generated scene.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Model directory holding `model.json`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Scene directories used as calibration sequences.
    #[arg(long)]
    pub scene: Vec<PathBuf>,
    /// Use Gaussian noise images instead of scenes.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub mean: Option<f64>,
    #[arg(long)]
    pub variance: Option<f64>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Calibration rate: share of nonzero samples that must fit.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub weight_bits: Option<u8>,
    #[arg(long)]
    pub bias_bits: Option<u8>,
    #[arg(long)]
    pub scale_bits: Option<u8>,
    #[arg(long)]
    pub act_bits: Option<u8>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Calibration output (`quant.json`), required in quant mode.
    #[arg(long)]
    pub quant: Option<PathBuf>,
    /// Largest accepted relative MSE increase in quant mode.
    #[arg(long)]
    pub budget: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Analyze the built-in reference network.
    #[arg(long, conflicts_with = "graph")]
    pub reference: bool,
    /// Operator graph JSON.
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    /// Use the built-in reference profile.
    #[arg(long, conflicts_with = "profile")]
    pub reference: bool,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Frames to simulate; the last one is reported as steady state.
    #[arg(long)]
    pub frames: Option<usize>,
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub seed: u64,
    pub json: bool,
    pub out: Output,
}

impl Ctx {
    /// Human-readable line, suppressed under `--json`.
    pub fn say(&self, line: impl AsRef<str>) {
        if !self.json {
            println!("{}", line.as_ref());
        }
    }

    pub fn finish(&self, summary: &serde_json::Value) -> CliResult<()> {
        if self.json {
            println!("{}", serde_json::to_string_pretty(summary)?);
        }
        Ok(())
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(&existing(p)?)?,
        None => RunConfig::default(),
    };
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("fadec-out"));
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        json: cli.json,
        out: Output::create(root)?,
        cfg,
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Calibrate(a) => commands::calibrate(&ctx, a),
        Command::Infer(a) => commands::infer(&ctx, a),
        Command::Analyze(a) => commands::analyze(&ctx, a),
        Command::Schedule(a) => commands::schedule(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("fadec: {e}");
            e.exit_code()
        }
        Err(_) => CliError::Internal("panic".into()).exit_code(),
    }
}
