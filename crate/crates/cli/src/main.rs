use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use spotarc_cli::cli::Cli;

fn main() -> ExitCode {
    // usage errors exit 2, help and version exit 0
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut err = std::io::stderr();
    let result = spotarc_cli::run(cli, &mut out, &mut err);
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(err, "spotarc: failed at {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
