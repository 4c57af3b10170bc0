use std::process::ExitCode;

fn main() -> ExitCode {
    match std::panic::catch_unwind(|| s2sr::cli::main_from(std::env::args_os())) {
        Ok(code) => code,
        Err(_) => ExitCode::from(4),
    }
}
