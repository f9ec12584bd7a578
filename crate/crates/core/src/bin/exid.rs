use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use excitation_id::pipeline::{Pipeline, PipelineConfig, Stage};
use excitation_id::Error;

/// Excitation trajectory design and base-parameter identification.
#[derive(Parser)]
#[command(name = "exid", version)]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(short, long, global = true, default_value = "exid.json")]
    config: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Parse the URDF and dump the kinematic chain.
    Inspect,
    /// Compute the base-parameter projection.
    BaseParams,
    /// Reduce the end-effector point cloud to feature points.
    Mfpee,
    /// Optimize the excitation trajectory.
    Optimize,
    /// Simulate measurements along the optimized and a held-out trajectory.
    Simulate,
    /// Track velocities and accelerations with the tracking differentiator.
    Filter,
    /// Fit base parameters to the filtered dataset.
    Identify,
    /// Predict held-out torques with the identified parameters.
    Validate,
    /// Aggregate all artifacts into one summary.
    Report,
    /// Run every stage in order.
    All,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::Inspect => vec![Stage::Inspect],
            Command::BaseParams => vec![Stage::BaseParams],
            Command::Mfpee => vec![Stage::Mfpee],
            Command::Optimize => vec![Stage::Optimize],
            Command::Simulate => vec![Stage::Simulate],
            Command::Filter => vec![Stage::Filter],
            Command::Identify => vec![Stage::Identify],
            Command::Validate => vec![Stage::Validate],
            Command::Report => vec![Stage::Report],
            Command::All => Stage::ALL.to_vec(),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::MissingArtifact { .. } => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let cfg = PipelineConfig::load(&cli.config)?;
    let pipeline = Pipeline::new(cfg)?;
    let mut infeasible = false;
    for stage in cli.command.stages() {
        if stage == Stage::Mfpee && pipeline.cfg.ee_cloud_path.is_none() && matches!(cli.command, Command::All) {
            continue;
        }
        log::info!("running {}", stage.name());
        let out = pipeline.run(stage)?;
        for p in &out.artifacts {
            println!("{}", p.display());
        }
        if out.infeasible {
            eprintln!("warning: optimized trajectory violates its constraints; least-violating result written");
            infeasible = true;
        }
    }
    Ok(infeasible)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
