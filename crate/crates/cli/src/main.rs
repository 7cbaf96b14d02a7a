use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = bicam_cli::Cli::parse();
    let stdout = std::io::stdout();
    match bicam_cli::run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("bicam: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
