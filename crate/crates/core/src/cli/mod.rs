//! Command-line orchestration: configuration, stage commands and the REPL.

pub mod commands;
pub mod config;
pub mod repl;

pub use commands::{CommandError, Run};
pub use config::{ConfigError, Overrides, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Stats,
    Label,
    PlanEval,
    RetrieveEval,
    Generate,
    Refine,
    Eval,
    Repl,
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn dispatch(command: Command, run: &Run) -> Result<(), CommandError> {
    match command {
        Command::Stats => print_json(&run.stats()?),
        Command::Label => print_json(&run.label()?),
        Command::PlanEval => print_json(&run.plan_eval()?),
        Command::RetrieveEval => print!("{}", run.retrieve_eval()?.table().to_csv()),
        Command::Generate => println!("{} responses", run.generate()?.len()),
        Command::Refine => {
            let (responses, traces) = run.refine()?;
            println!("{} responses, {} refinement passes", responses.len(), traces.len());
        }
        Command::Eval => print_json(&run.eval()?),
        Command::Repl => {
            let stdin = std::io::stdin();
            repl::repl(run, stdin.lock(), std::io::stdout())
                .map_err(|e| CommandError::Runtime { stage: "repl", message: e.to_string() })?;
        }
    }
    Ok(())
}

/// Runs one command and maps the outcome to a process exit code.
pub fn execute(command: Command, config: RunConfig) -> i32 {
    let result = Run::prepare(config).and_then(|run| dispatch(command, &run));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
