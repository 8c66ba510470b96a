use std::process::ExitCode;

fn main() -> ExitCode {
    macoff::cli::run(std::env::args_os())
}
