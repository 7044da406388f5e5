use std::process::ExitCode;

use clap::Parser;
use mst::cli::{execute, Cli, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let (code, out) = execute(&cli.cmd);
    if code == 0 || code == 1 || code == 2 || code == 3 || code == 4 {
        print!("{out}");
    } else {
        eprint!("{out}");
    }
    ExitCode::from(code as u8)
}
