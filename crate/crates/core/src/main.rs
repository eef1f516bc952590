use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(coeq::cli::run(std::env::args()) as u8)
}
