use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use symkbc_cli::config::{example, PipelineConfig};
use symkbc_cli::{EvalOptions, Pipeline};

#[derive(Parser)]
#[command(name = "symkbc", version, about = "Rule-based knowledge base completion")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true, default_value = "symkbc.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample subgraphs around training triples of every relation.
    Extract,
    /// Ask the configured backend for rules and refine them.
    Propose,
    /// Train the embedding model.
    RotateTrain,
    /// Fit rule and mixing weights.
    Train {
        /// Keep every rule weight equal; only the mixing weight is learned.
        #[arg(long)]
        uniform_weights: bool,
        /// Continue from the last checkpoint of this configuration.
        #[arg(long)]
        resume: bool,
    },
    /// Rank every query of a split and write a report.
    Eval {
        /// `valid` or `test`; defaults to eval.split from the config.
        #[arg(long)]
        split: Option<String>,
        /// Also report rule quality from eval.annotations.
        #[arg(long)]
        rules_report: bool,
        /// Also write the metrics as CSV.
        #[arg(long)]
        emit_csv: bool,
        /// Add a row for tails asked directly of the remote backend.
        #[arg(long)]
        inference_baseline: bool,
        /// Evaluate the equal-weight model.
        #[arg(long)]
        uniform_weights: bool,
    },
    /// Show the best tails for (head, relation, ?) and why.
    Explain {
        head: String,
        relation: String,
        #[arg(long)]
        top_k: Option<usize>,
        /// Explain the equal-weight model.
        #[arg(long)]
        uniform_weights: bool,
    },
    /// Print a commented configuration with every default.
    ConfigExample,
}

fn load(cli: &Cli, uniform: bool) -> Result<Pipeline> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    if uniform {
        cfg.trainer.uniform_weights = true;
    }
    Pipeline::open(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let text = match &cli.command {
        Command::ConfigExample => example(),
        Command::Extract => load(&cli, false)?.extract()?,
        Command::Propose => load(&cli, false)?.propose()?,
        Command::RotateTrain => load(&cli, false)?.rotate_train()?,
        Command::Train { uniform_weights, resume } => load(&cli, *uniform_weights)?.train(*resume)?,
        Command::Eval { split, rules_report, emit_csv, inference_baseline, uniform_weights } => {
            let opts = EvalOptions {
                split: split.clone(),
                rules_report: *rules_report,
                emit_csv: *emit_csv,
                inference_baseline: *inference_baseline,
            };
            let out = load(&cli, *uniform_weights)?.eval(&opts)?;
            format!("{}report: {}\n", out.text, out.report_path.display())
        }
        Command::Explain { head, relation, top_k, uniform_weights } => {
            load(&cli, *uniform_weights)?.explain(head, relation, *top_k)?
        }
    };
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
