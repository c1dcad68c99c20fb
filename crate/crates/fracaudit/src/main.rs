use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(fracaudit::cli::run(std::env::args_os()))
}
