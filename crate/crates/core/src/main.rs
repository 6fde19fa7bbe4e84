use std::process::ExitCode;

fn main() -> ExitCode {
    let env_seed = std::env::var("GPB_SEED").ok();
    ExitCode::from(gpb::cli::run_cli(std::env::args_os(), env_seed.as_deref()))
}
