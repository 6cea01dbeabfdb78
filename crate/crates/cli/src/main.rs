use std::process::ExitCode;

fn main() -> ExitCode {
    tridenoise_cli::run(std::env::args_os())
}
