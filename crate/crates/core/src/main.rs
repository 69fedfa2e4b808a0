use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let code = schedeploy::cli::run(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code.clamp(0, 255) as u8)
}
