use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(moralframe_cli::run(std::env::args_os()) as u8)
}
