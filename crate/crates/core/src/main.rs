use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use protophen::pipeline::config::RunConfig;
use protophen::pipeline::stages::{run_all, run_stage, Stage};

/// Prototype-based ECG phenotyping pipeline.
///
/// Settings apply in order: built-in defaults, `--config` file,
/// `PROTOPHEN_<KEY>` environment variables, then command-line flags.
#[derive(Debug, Parser)]
#[command(name = "protophen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed; every stage seed derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Extra `key=value` overrides, applied after the other flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_effective_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic cohorts and their resource files.
    Synth,
    /// Train the prototype model on the annotated cohort.
    Train,
    /// Run the model on both cohorts.
    Infer,
    /// Map ICD codes to phecodes and extract report concepts.
    Extract,
    /// Association scan, granularity comparison, mixed/uniform analysis.
    Phewas,
    /// Phecode prediction benchmark.
    Predict,
    /// Tables and plots.
    Report,
    /// Every stage in order.
    All,
}

fn effective_config(cli: &Cli) -> protophen::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| protophen::Error::Config(format!("--set {kv:?}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> protophen::Result<()> {
    let cfg = effective_config(&cli)?;
    if cli.print_effective_config {
        print!("{}", cfg.effective_text());
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| protophen::Error::Config(format!("thread pool: {e}")))?;
    let stage = match cli.command {
        Command::Synth => Stage::Synth,
        Command::Train => Stage::Train,
        Command::Infer => Stage::Infer,
        Command::Extract => Stage::Extract,
        Command::Phewas => Stage::Phewas,
        Command::Predict => Stage::Predict,
        Command::Report => Stage::Report,
        Command::All => {
            run_all(&cfg)?;
            return Ok(());
        }
    };
    run_stage(stage, &cfg)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
