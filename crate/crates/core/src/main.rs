use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metarec::harness::{
    cli_evaluate, cli_generate_corpus, cli_meta_train, cli_suite, read_json, CorpusConfig,
    Scenario, SuiteConfig,
};
use metarec::metalearn::MetaConfig;

/// Fault-recovery experiment runner: corpus generation, meta-training,
/// and closed-loop evaluation of the online adaptation pipeline.
#[derive(Parser)]
#[command(name = "metarec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly the configured fault/trajectory matrix and write per-task
    /// training datasets plus a manifest.
    GenerateCorpus {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Meta-train an initialization on a generated corpus.
    MetaTrain {
        #[arg(long)]
        config: PathBuf,
        /// Directory written by generate-corpus.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one scenario with baseline and adapted arms; write run logs,
    /// adaptation trace, report JSON, and SVG plots.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint written by meta-train.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a list of scenarios and summarize them in one table.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> metarec::Result<()> {
    match cli.command {
        Command::GenerateCorpus { config, seed, out } => {
            let cfg: CorpusConfig = read_json(&config)?;
            let manifest = cli_generate_corpus(&cfg, seed, &out)?;
            println!(
                "corpus: {} tasks, {} trajectories, {} skips -> {}",
                manifest.task_files.len(),
                manifest.trajectory_count,
                manifest.skips.len(),
                out.display()
            );
        }
        Command::MetaTrain { config, corpus, seed, out } => {
            let cfg: MetaConfig = read_json(&config)?;
            let ckpt = cli_meta_train(&corpus, &cfg, seed, &out)?;
            println!("checkpoint: {}", ckpt.display());
        }
        Command::Evaluate { config, checkpoint, seed, out } => {
            let scenario: Scenario = read_json(&config)?;
            let report = cli_evaluate(&scenario, &checkpoint, seed, &out)?;
            println!(
                "{}: baseline {:.4} m, adapted {:.4} m, relearns {}",
                report.scenario,
                report.average_deviation_baseline,
                report.average_deviation_adapted,
                report.relearn_count
            );
        }
        Command::Suite { config, checkpoint, seed, out } => {
            let suite: SuiteConfig = read_json(&config)?;
            let reports = cli_suite(&suite, &checkpoint, seed, &out)?;
            println!(
                "{:<20} {:>12} {:>12} {:>8} {:>9}",
                "scenario", "baseline", "adapted", "ratio", "relearns"
            );
            for r in &reports {
                println!(
                    "{:<20} {:>12.4} {:>12.4} {:>8.3} {:>9}",
                    r.scenario,
                    r.average_deviation_baseline,
                    r.average_deviation_adapted,
                    r.average_deviation_adapted / r.average_deviation_baseline,
                    r.relearn_count
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.to_string() });
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
