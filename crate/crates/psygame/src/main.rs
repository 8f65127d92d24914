use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(psygame::cli::run(std::env::args_os()))
}
