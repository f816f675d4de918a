use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msrag::cli::{execute, Command, Overrides, RunConfig};
use msrag::planner::{Fallback, PlannerBackend};
use msrag::retrieval::ScorerKind;

#[derive(Parser)]
#[command(name = "msrag", version, about = "Multi-source retrieval-augmented dialogue pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// llm-zero-shot, llm-icl, oracle, always-all, always-null
    #[arg(long, global = true, value_parser = parse_planner)]
    planner: Option<PlannerBackend>,
    /// bm25, dense, llm, self, oracle
    #[arg(long, global = true, value_parser = parse_scorer)]
    scorer: Option<ScorerKind>,
    /// null or error
    #[arg(long, global = true, value_parser = parse_fallback)]
    fallback: Option<Fallback>,
    #[arg(long, global = true)]
    top_n: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<usize>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// read upstream artifacts from the output directory
    #[arg(long, global = true)]
    reuse: bool,
    /// refine responses before evaluating
    #[arg(long, global = true)]
    refine: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Corpus statistics
    Stats,
    /// Precompute teacher relevance labels
    Label,
    /// Planning F1 per class
    PlanEval,
    /// Recall@k per source role
    RetrieveEval,
    /// Plan, retrieve and generate responses
    Generate,
    /// Self-refine generated responses
    Refine,
    /// Full evaluation report
    Eval,
    /// Interactive session
    Repl,
}

fn parse_planner(s: &str) -> Result<PlannerBackend, String> {
    PlannerBackend::parse(s).ok_or_else(|| format!("unknown planner {s:?}"))
}

fn parse_scorer(s: &str) -> Result<ScorerKind, String> {
    ScorerKind::parse(s).ok_or_else(|| format!("unknown scorer {s:?}"))
}

fn parse_fallback(s: &str) -> Result<Fallback, String> {
    match s {
        "null" => Ok(Fallback::Null),
        "error" => Ok(Fallback::Error),
        _ => Err(format!("unknown fallback {s:?}")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        corpus: cli.corpus,
        out_dir: cli.out_dir,
        planner: cli.planner,
        scorer: cli.scorer,
        fallback: cli.fallback,
        top_n: cli.top_n,
        alpha: cli.alpha,
        steps: cli.steps,
        parallelism: cli.parallelism,
        seed: cli.seed,
        reuse_artifacts: cli.reuse,
        refine: cli.refine,
    });
    let command = match cli.command {
        Cmd::Stats => Command::Stats,
        Cmd::Label => Command::Label,
        Cmd::PlanEval => Command::PlanEval,
        Cmd::RetrieveEval => Command::RetrieveEval,
        Cmd::Generate => Command::Generate,
        Cmd::Refine => Command::Refine,
        Cmd::Eval => Command::Eval,
        Cmd::Repl => Command::Repl,
    };
    ExitCode::from(execute(command, config) as u8)
}
