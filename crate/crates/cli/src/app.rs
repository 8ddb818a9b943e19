use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::{self, VerificationFailure};
use crate::config::{parse_seed_file, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "habcov",
    version,
    about = "Multi-balloon coverage: QMIX training, Voronoi baseline, evaluation"
)]
pub struct Cli {
    /// Print every configuration key with its default value and exit.
    #[arg(long, global = true)]
    pub dump_defaults: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Config file (`[section]` headers, `key = value` lines).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// File listing episode seeds, one per line.
    #[arg(long, value_name = "FILE")]
    pub seeds: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub agents: Option<usize>,
    #[arg(long, value_name = "N")]
    pub levels: Option<usize>,
    /// Training steps for `train`; episode length for the other commands.
    #[arg(long, value_name = "N")]
    pub steps: Option<u64>,
    /// Override any config key, e.g. `--set wind.speed=15`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train QMIX; writes a checkpoint and the learning curve.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Continue from a checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint over a seed batch.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Run the Voronoi baseline over a seed batch.
    Baseline {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Seed-paired comparison of two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Also write compare.csv here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Re-simulate a trace and check it bit for bit.
    Replay { trace: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepsMeaning {
    TrainingSteps,
    EpisodeLength,
}

pub fn resolve_config(args: &CommonArgs, steps: StepsMeaning) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("--set expects SECTION.KEY=VALUE, got {o:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.agents {
        cfg.agents = n;
    }
    if let Some(n) = args.levels {
        cfg.levels = n;
    }
    if let Some(n) = args.steps {
        match steps {
            StepsMeaning::TrainingSteps => cfg.train.total_steps = n,
            StepsMeaning::EpisodeLength => cfg.episode_steps = n as usize,
        }
    }
    if let Some(path) = &args.seeds {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading seeds file {}", path.display()))?;
        cfg.seeds = Some(parse_seed_file(&text, &path.display().to_string())?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &CommonArgs, default: &str) -> PathBuf {
    args.out.clone().unwrap_or_else(|| Path::new("runs").join(default))
}

fn print_rows_summary(kind: &str, out: &Path, rows: &[habcov_core::metrics::EpisodeMetrics]) {
    let n = rows.len().max(1) as f64;
    let twr = rows.iter().map(|r| r.mean_group_twr).sum::<f64>() / n;
    let ret = rows.iter().map(|r| r.episode_return).sum::<f64>() / n;
    println!(
        "{kind}: {} episodes -> {} (mean group TWR {twr:.4}, mean return {ret:.1})",
        rows.len(),
        out.display()
    );
}

pub fn execute(cli: Cli) -> Result<()> {
    if cli.dump_defaults {
        print!("{}", RunConfig::default().to_text());
        return Ok(());
    }
    let Some(command) = cli.command else {
        anyhow::bail!(habcov_core::Error::Usage(
            "no subcommand given (train, eval, baseline, compare, replay)".into()
        ));
    };
    match command {
        Command::Train { common, resume } => {
            let cfg = resolve_config(&common, StepsMeaning::TrainingSteps)?;
            let out = out_dir(&common, "train");
            let s = commands::cmd_train(&cfg, &out, resume.as_deref(), &mut |line| eprintln!("{line}"))?;
            println!(
                "train: {} steps, {} episodes, {} curve rows -> {}",
                s.env_steps,
                s.episodes,
                s.curve.len(),
                out.display()
            );
        }
        Command::Eval { common, checkpoint } => {
            let cfg = resolve_config(&common, StepsMeaning::EpisodeLength)?;
            let out = out_dir(&common, "eval");
            let rows = commands::cmd_eval(&cfg, &checkpoint, &out)?;
            print_rows_summary("eval", &out, &rows);
        }
        Command::Baseline { common } => {
            let cfg = resolve_config(&common, StepsMeaning::EpisodeLength)?;
            let out = out_dir(&common, "baseline");
            let rows = commands::cmd_baseline(&cfg, &out)?;
            print_rows_summary("baseline", &out, &rows);
        }
        Command::Compare { a, b, out } => {
            let report = commands::cmd_compare(&a, &b, out.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Replay { trace } => {
            let r = commands::cmd_replay(&trace)?;
            println!("replay ok: {} steps reproduced exactly", r.steps);
            println!("{}", habcov_core::metrics::EpisodeMetrics::CSV_HEADER);
            println!("{}", r.metrics.to_csv_row());
        }
    }
    Ok(())
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<VerificationFailure>().is_some() {
        EXIT_VERIFY
    } else {
        EXIT_USAGE
    }
}

/// Parses arguments, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
