use std::process::ExitCode;

fn main() -> ExitCode {
    match selfext::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), e);
            ExitCode::from(2)
        }
    }
}
