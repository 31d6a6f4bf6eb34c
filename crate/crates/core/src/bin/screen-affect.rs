use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use screen_affect::pipeline::{
    BackendKind, LlmMode, Overrides, Pipeline, PipelineConfig, PipelineError,
};

#[derive(Parser)]
#[command(
    name = "screen-affect",
    version,
    about = "Screen-text sentiment and weekly affect prediction"
)]
struct Cli {
    /// Pipeline configuration (TOML)
    #[arg(long, global = true, default_value = "screen-affect.toml")]
    config: PathBuf,

    /// Override the split seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the sentiment backend
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,

    /// Override the LLM mode
    #[arg(long, global = true, value_enum)]
    llm: Option<Llm>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct screens from raw captures
    Ingest,
    /// Score every non-empty screen
    Score,
    /// Build weeks, run all methods on shared splits, write reports
    Evaluate,
    /// Print the tables of an earlier evaluation
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Lexicon,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Llm {
    Scripted,
    Remote,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config = PipelineConfig::load(&cli.config)?;
    let overrides = Overrides {
        seed: cli.seed,
        backend: cli.backend.map(|b| match b {
            Backend::Lexicon => BackendKind::Lexicon,
            Backend::Remote => BackendKind::Remote,
        }),
        llm: cli.llm.map(|m| match m {
            Llm::Scripted => LlmMode::Scripted,
            Llm::Remote => LlmMode::Remote,
        }),
    };
    let pipeline = Pipeline::new(config, overrides)?;
    match cli.command {
        Command::Ingest => {
            let out = pipeline.ingest()?;
            eprintln!(
                "ingest: {} screens from {} records ({} skipped)",
                out.screens, out.counts.input, out.counts.skipped
            );
        }
        Command::Score => {
            let out = pipeline.score()?;
            eprintln!(
                "score: {} scores from {} screens ({} empty)",
                out.scores, out.counts.input, out.counts.skipped
            );
        }
        Command::Evaluate => {
            let out = pipeline.evaluate()?;
            eprintln!(
                "evaluate: {} participant report(s), {} failure(s) recorded",
                out.reports.len(),
                out.failures.len()
            );
        }
        Command::Report => print!("{}", pipeline.report()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
