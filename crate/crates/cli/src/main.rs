//! `qgrank`: partial-copy decoding, QA reranking and evaluation pipelines.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
//! violation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::EvalInputs;
use crate::config::{RunConfig, Settings};
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "qgrank",
    version,
    about = "Partial-copy beam search, QA-based reranking and QG evaluation"
)]
struct Cli {
    /// TOML file with default settings (flags take precedence)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run the built-in randomized invariant checks and exit
    #[arg(long)]
    seed_check: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Beam-search n-best questions for every example
    Decode(DecodeArgs),
    /// Rerank n-best lists with a QA oracle
    Rerank(RerankArgs),
    /// BLEU and analysis reports
    Eval(EvalArgs),
    /// Build a toy bigram generator from an examples file with questions
    ToyTrain(ToyTrainArgs),
}

#[derive(Args)]
struct DecodeArgs {
    /// Examples JSONL
    #[arg(long)]
    examples: PathBuf,
    /// N-best JSONL output (stdout if omitted)
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Also write every model step taken as a replayable trace
    #[arg(long)]
    record_trace: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct RerankArgs {
    /// N-best JSONL from `decode`
    #[arg(long, short)]
    input: PathBuf,
    /// Examples JSONL (passages and gold answers)
    #[arg(long)]
    examples: PathBuf,
    /// Reranked JSONL output (stdout if omitted)
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// JSON summary (lists, top-1 changes)
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct EvalArgs {
    /// Candidate questions (n-best, reranked, or {"id","question"} JSONL)
    #[arg(long)]
    candidates: PathBuf,
    /// Reference questions (examples JSONL or {"id","question"} JSONL)
    #[arg(long)]
    references: PathBuf,
    /// Examples JSONL with passages; enables the copy-rate section
    #[arg(long)]
    passages: Option<PathBuf>,
    /// Count generic templates; optional file with one pattern per line
    #[arg(long, num_args = 0..=1)]
    templates: Option<Option<PathBuf>>,
    /// Candidates before reranking; enables the win/loss section
    #[arg(long)]
    before: Option<PathBuf>,
    /// Keep case when tokenizing
    #[arg(long)]
    no_lowercase: bool,
    /// Highest BLEU order
    #[arg(long, default_value_t = 4)]
    max_n: usize,
    /// Text report output (stdout if omitted)
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Machine-readable JSON report
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct ToyTrainArgs {
    /// Examples JSONL; every record needs a reference_question
    #[arg(long)]
    corpus: PathBuf,
    /// Additive smoothing constant
    #[arg(long, default_value_t = 0.1)]
    smoothing: f64,
    #[arg(long, short)]
    output: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.seed_check {
        let outcomes = qgrank_core::selfcheck::run_all(0x5eed);
        let mut failed = 0;
        for o in &outcomes {
            match &o.failure {
                None => println!("PASS {} ({} trials)", o.name, o.trials),
                Some(f) => {
                    failed += 1;
                    println!("FAIL {}: {f}", o.name);
                }
            }
        }
        if failed > 0 {
            return Err(CliError::Internal(anyhow::anyhow!(
                "{failed} invariant check(s) failed"
            )));
        }
        if cli.command.is_none() {
            return Ok(());
        }
    }
    let config = cli.config.as_deref();
    match cli.command {
        None => Err(CliError::Usage("no subcommand given (see --help)".into())),
        Some(Command::Decode(a)) => {
            let cfg = RunConfig::resolve(a.settings, config)?;
            let s = commands::decode(&a.examples, &cfg, a.output.as_deref(), a.record_trace.as_deref())?;
            eprintln!("decoded {} examples, {} candidates", s.examples, s.candidates);
            if let Some(n) = s.recorded_steps {
                eprintln!("recorded {n} trace steps");
            }
            Ok(())
        }
        Some(Command::Rerank(a)) => {
            let cfg = RunConfig::resolve(a.settings, config)?;
            let s = commands::rerank_cmd(
                &a.input,
                &a.examples,
                &cfg,
                a.output.as_deref(),
                a.report.as_deref(),
            )?;
            eprintln!(
                "reranked {} lists with lambda2 = {}; top-1 changed in {}",
                s.lists, s.lambda2, s.top1_changed
            );
            Ok(())
        }
        Some(Command::Eval(a)) => {
            let cfg = RunConfig::resolve(a.settings, config)?;
            if !(1..=4).contains(&a.max_n) {
                return Err(CliError::Usage(format!(
                    "--max-n must be 1..=4 (got {})",
                    a.max_n
                )));
            }
            let templates = a.templates.as_ref().map(Option::as_deref);
            let inputs = EvalInputs {
                candidates: &a.candidates,
                references: &a.references,
                passages: a.passages.as_deref(),
                templates,
                before: a.before.as_deref(),
                lowercase: !a.no_lowercase,
                max_n: a.max_n,
            };
            let report = commands::eval(&inputs, &cfg)?;
            commands::write_report(&report, a.output.as_deref(), a.json.as_deref())
        }
        Some(Command::ToyTrain(a)) => {
            let (n, v) = commands::toy_train(&a.corpus, a.smoothing, &a.output)?;
            eprintln!("trained toy model on {n} questions, vocabulary of {v}");
            Ok(())
        }
    }
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
            eprintln!("qgrank: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
