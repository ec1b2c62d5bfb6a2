use std::process::ExitCode;

use clap::Parser;
use curvprobe_cli::{exit_code, run, Cli};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> ExitCode {
    // clap exits with status 2 on malformed command lines.
    let cli = Cli::parse();
    match run(cli) {
        Ok(m) => {
            eprintln!("wrote {} artifacts and {} to {}", m.artifacts.len(), curvprobe_cli::MANIFEST, m.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
