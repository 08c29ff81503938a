use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memprobe::pipeline::{env_overrides, exit_code, Outcome, Pipeline, RunManifest, Stage};
use memprobe::Error;

#[derive(Parser)]
#[command(name = "memprobe", version, about = "Measure name memorization in fine-tuned NER models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run manifest (key = value lines).
    #[arg(short, long, default_value = "run.manifest")]
    manifest: PathBuf,
    /// Override a manifest key, e.g. --set seed=7.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Rerun even if inputs are unchanged.
    #[arg(long)]
    force: bool,
    /// Continue an interrupted `score` from its checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the pairwise In-train/Out-train dataset.
    BuildDataset(Common),
    /// Score every name under every prompt.
    Score(Common),
    /// Per-prompt scores and ranks on dev and test.
    Mmem(Common),
    /// Baselines, best/worst prompts and ensembles.
    Strategies(Common),
    /// Greedy word removal from the best and worst prompts.
    Engineer(Common),
    /// Cochran's Q, rank correlations and property groupings.
    Stats(Common),
    /// Attention heatmaps for the best and worst prompts.
    Attention(Common),
    /// Collate the result tables.
    Report(Common),
    /// Check the manifest and its input files.
    Validate(Common),
}

fn load(c: &Common) -> Result<Pipeline, Error> {
    let mut overrides = env_overrides();
    for s in &c.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Manifest(format!("--set {s:?} must be KEY=VALUE")))?;
        overrides.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    if c.resume {
        overrides.push(("resume".into(), "true".into()));
    }
    Ok(Pipeline::new(RunManifest::load_with(&c.manifest, &overrides)?).force(c.force))
}

fn run(cli: Cli) -> Result<(), Error> {
    let (stage, common) = match &cli.command {
        Command::BuildDataset(c) => (Stage::BuildDataset, c),
        Command::Score(c) => (Stage::Score, c),
        Command::Mmem(c) => (Stage::Mmem, c),
        Command::Strategies(c) => (Stage::Strategies, c),
        Command::Engineer(c) => (Stage::Engineer, c),
        Command::Stats(c) => (Stage::Stats, c),
        Command::Attention(c) => (Stage::Attention, c),
        Command::Report(c) => (Stage::Report, c),
        Command::Validate(c) => {
            for line in load(c)?.validate()? {
                println!("{line}");
            }
            println!("ok");
            return Ok(());
        }
    };
    let pipeline = load(common)?;
    match pipeline.run(stage)? {
        Outcome::Ran => println!("{}: done", stage.name()),
        Outcome::UpToDate => println!("{}: up to date (use --force to rerun)", stage.name()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
