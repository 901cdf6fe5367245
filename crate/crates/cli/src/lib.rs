//! `mvsfuse` pipeline: config parsing, stage orchestration and the command line.

pub mod config;
pub mod stages;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use mvsfuse_core::evaluation::{aggregate, reports_from_json_lines, reports_to_json_lines};
use thiserror::Error;

pub use config::SceneConfig;
pub use stages::{Stage, StageContext};

/// A config that failed to parse or validate. `path` is the dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "config error: {}", self.message)
        } else {
            write!(f, "config error at `{}`: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mvsfuse", version, about = "Multi-view-stereo ensemble pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, sample and project a dense cloud; write a COLMAP sparse model.
    Prepare(StageArgs),
    /// Register a cloud onto another through matched camera poses and ICP.
    Align(StageArgs),
    /// Drop oversized and sliver faces from a mesh.
    Mesh(StageArgs),
    /// Poisson or frequency fusion of original/rendered image pairs.
    Blend(StageArgs),
    /// Concatenate clouds with source tags, optionally voxel-deduplicated.
    Merge(StageArgs),
    /// Precision, recall and F-score against ground truth.
    Eval(StageArgs),
    /// Every configured stage in order.
    All(StageArgs),
    /// Mean metrics over the per-scene reports of several eval runs.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Print the canonical config and exit.
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// `eval.jsonl` files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Also write the result here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Reads, parses and validates a config file; applies the `--seed` override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<SceneConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: String::new(),
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut config = SceneConfig::from_json(&text)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run_stages(which: Option<Stage>, args: &StageArgs) -> Result<(), CliError> {
    let config = load_config(&args.config, args.seed)?;
    if args.dump_config {
        print!("{}", config.to_json());
        return Ok(());
    }
    let selected: Vec<Stage> = match which {
        Some(stage) => {
            if !stage.is_configured(&config) {
                return Err(ConfigError {
                    path: stage.name().into(),
                    message: "section is required for this stage".into(),
                }
                .into());
            }
            vec![stage]
        }
        None => Stage::ALL.into_iter().filter(|s| s.is_configured(&config)).collect(),
    };
    if selected.is_empty() {
        return Err(ConfigError {
            path: String::new(),
            message: "no stage sections configured".into(),
        }
        .into());
    }
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let ctx = StageContext {
        config: &config,
        base: &base,
    };
    let body = || -> anyhow::Result<()> {
        for stage in &selected {
            stages::run_stage(*stage, &ctx).with_context(|| format!("stage {}", stage.name()))?;
        }
        Ok(())
    };
    match args.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building thread pool")?;
            pool.install(body)?
        }
        None => body()?,
    }
    Ok(())
}

fn run_aggregate(args: &AggregateArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for path in &args.reports {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        reports.extend(reports_from_json_lines(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    let summary = aggregate(&reports).context("aggregating reports")?;
    let text = reports_to_json_lines(&reports, &summary);
    if let Some(out) = &args.output {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{text}");
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Prepare(a) => run_stages(Some(Stage::Prepare), a),
        Command::Align(a) => run_stages(Some(Stage::Align), a),
        Command::Mesh(a) => run_stages(Some(Stage::Mesh), a),
        Command::Blend(a) => run_stages(Some(Stage::Blend), a),
        Command::Merge(a) => run_stages(Some(Stage::Merge), a),
        Command::Eval(a) => run_stages(Some(Stage::Eval), a),
        Command::All(a) => run_stages(None, a),
        Command::Aggregate(a) => run_aggregate(a),
    }
}

/// Parses `args` (including the program name) and runs; usage errors exit with 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
