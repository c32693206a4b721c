use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(randext::cli::run(std::env::args_os()) as u8)
}
