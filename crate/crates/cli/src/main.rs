//! `stgrid`: synthesize, edit, fit, render and evaluate camera–time grids.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure.
//! Failures print `{"error": {"kind": ..., "message": ...}}` on stderr.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stgrid::pipeline::{self, PipelineConfig};
use stgrid::synth::SceneSpec;
use stgrid::{Error, SplatError, SynthError};

#[derive(Parser)]
#[command(name = "stgrid", version, about = "Grid-based spatio-temporal propagation for multi-view video editing")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Forces the fixed-order gradient reduction.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene from a spec file.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Propagate edits over the input grid.
    Edit,
    /// Fit a Gaussian scene to the edited frames.
    Optimize,
    /// Render frames from a scene file.
    Render {
        /// Defaults to `<output>/scene.json` of the config.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        times: usize,
        /// Defaults to `<output>/render` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the metric report.
    Evaluate,
    /// synth (if configured) -> edit -> optimize -> render -> evaluate.
    Run,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_)
            | Error::Synth(SynthError::SpecError(_))
            | Error::Splat(SplatError::InvalidConfig(_))
            | Error::Attention(_) => Failure::Validation(msg),
            _ => Failure::Runtime(msg),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Validation("this command needs --config".into()))?;
    let mut cfg = PipelineConfig::load(path).map_err(|e| Failure::Validation(e.to_string()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        if let Some(spec) = cfg.scene.as_mut() {
            spec.seed = seed;
        }
    }
    if cli.deterministic {
        cfg.splat.optimizer.deterministic = true;
    }
    cfg.validate().map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(cfg)
}

fn print(value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    writeln!(std::io::stdout().lock(), "{text}").map_err(|e| Failure::Runtime(format!("writing output: {e}")))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Validation("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(spec)
                .map_err(|e| Failure::Validation(format!("{}: {e}", spec.display())))?;
            let mut spec: SceneSpec = serde_json::from_str(&text).map_err(|e| Failure::Validation(e.to_string()))?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let manifest = pipeline::cmd_synth(&spec, out)?;
            print(&serde_json::json!({ "manifest": out.join("manifest.json"), "frames": manifest.frames.len() }))
        }
        Command::Edit => print(&pipeline::cmd_edit(&load_config(cli)?)?),
        Command::Optimize => print(&pipeline::cmd_optimize(&load_config(cli)?)?),
        Command::Render { scene, times, out } => {
            let (scene, out) = match (scene, out) {
                (Some(s), Some(o)) => (s.clone(), o.clone()),
                _ => {
                    let cfg = load_config(cli)?;
                    (
                        scene.clone().unwrap_or_else(|| cfg.output.join("scene.json")),
                        out.clone().unwrap_or_else(|| cfg.output.join("render")),
                    )
                }
            };
            let paths = pipeline::cmd_render(&scene, *times, &out)?;
            print(&serde_json::json!({ "frames": paths }))
        }
        Command::Evaluate => print(&pipeline::cmd_evaluate(&load_config(cli)?)?),
        Command::Run => print(&pipeline::run_all(&load_config(cli)?)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_from_env("STGRID_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, message, code) = match f {
                Failure::Validation(m) => ("validation", m, 2),
                Failure::Runtime(m) => ("runtime", m, 3),
            };
            tracing::debug!(kind, "command failed");
            eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
            ExitCode::from(code)
        }
    }
}
