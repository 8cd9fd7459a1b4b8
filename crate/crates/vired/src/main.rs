use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(vired::cli::run(std::env::args()) as u8)
}
