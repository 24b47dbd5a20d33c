//! Flag parsing and the merge of flags over the configuration file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Outcome};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "lineage",
    version,
    about = "Find the parent model a fine-tuned network came from"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; every field has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed all randomness derives from.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum number of worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory; must not exist or be empty.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Zoo directory to read.
    #[arg(long, global = true)]
    pub zoo: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train parents and fine-tune their descendants into a zoo directory.
    ZooBuild,
    /// Rank the candidate parents of one child.
    Detect {
        #[arg(long)]
        child: Option<String>,
        /// e.g. `l2`, `l2+approx`, `cka+oracle`.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        tap: Option<String>,
        /// Add the child itself to the candidates.
        #[arg(long)]
        include_self: bool,
    },
    /// Evaluate learning-free methods over every descendant of a zoo.
    Eval {
        /// Methods to evaluate (repeatable); replaces the configured list.
        #[arg(long)]
        method: Vec<String>,
        /// Single α instead of the configured grid.
        #[arg(long)]
        alpha: Option<f64>,
        /// Single tap instead of the configured list.
        #[arg(long)]
        tap: Option<String>,
        /// Candidate removed from the set (repeatable).
        #[arg(long)]
        withhold_parent: Vec<String>,
    },
    /// Train the learned detector on a zoo.
    TrainDetector {
        #[arg(long)]
        epochs: Option<usize>,
        /// Add the "no parent" class.
        #[arg(long)]
        no_parent: bool,
        /// Candidate to withhold; `auto` picks the most isolated one.
        #[arg(long)]
        withhold_parent: Option<String>,
        /// Directory of an earlier run to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ZooBuild => "zoo-build",
            Command::Detect { .. } => "detect",
            Command::Eval { .. } => "eval",
            Command::TrainDetector { .. } => "train-detector",
        }
    }
}

/// The configuration file (or defaults) with the command-line overrides applied.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let g = &cli.global;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if g.workers.is_some() {
        cfg.workers = g.workers;
    }
    if g.out.is_some() {
        cfg.out = g.out.clone();
    }
    if g.zoo.is_some() {
        cfg.zoo.path = g.zoo.clone();
    }
    match &cli.command {
        Command::ZooBuild => {}
        Command::Detect {
            child,
            method,
            alpha,
            tap,
            include_self,
        } => {
            let d = &mut cfg.detect;
            if child.is_some() {
                d.child = child.clone();
            }
            if let Some(m) = method {
                d.method = m.clone();
            }
            if let Some(a) = alpha {
                d.alpha = *a;
            }
            if let Some(t) = tap {
                d.tap = t.clone();
            }
            d.include_self |= include_self;
        }
        Command::Eval {
            method,
            alpha,
            tap,
            withhold_parent,
        } => {
            if !method.is_empty() {
                cfg.methods.list = method.clone();
            }
            if let Some(a) = alpha {
                cfg.methods.alphas = vec![*a];
            }
            if let Some(t) = tap {
                cfg.methods.taps = vec![t.clone()];
            }
            cfg.eval.withhold.extend(withhold_parent.iter().cloned());
        }
        Command::TrainDetector {
            epochs,
            no_parent,
            withhold_parent,
            resume,
        } => {
            let d = &mut cfg.detector;
            if let Some(e) = epochs {
                d.epochs = *e;
            }
            d.no_parent |= no_parent;
            if withhold_parent.is_some() {
                d.withhold_parent = withhold_parent.clone();
            }
            if resume.is_some() {
                d.resume = resume.clone();
            }
        }
    }
    if cfg.workers == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let cfg = resolve(&cli)?;
    let job = || match cli.command {
        Command::ZooBuild => commands::zoo_build(&cfg),
        Command::Detect { .. } => commands::detect(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::TrainDetector { .. } => commands::train_detector(&cfg),
    };
    match cfg.workers {
        // A local pool, so library callers (and tests) can run commands
        // side by side with different bounds.
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))?
            .install(job),
        None => job(),
    }
}
