use clap::Parser;
use sparse_uq_cli::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(outcome) => {
            if !outcome.complete {
                eprintln!("some variants failed; see summary.json");
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
