use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match senticast_cli::run(std::env::args()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            // Machine-readable failure on stderr.
            let body = serde_json::json!({
                "error": {
                    "message": error.to_string(),
                    "chain": error.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
                }
            });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
