use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(flare_uq::run(std::env::args_os()))
}
