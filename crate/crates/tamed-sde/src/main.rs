use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tamed_sde::cli::run(std::env::args_os()))
}
