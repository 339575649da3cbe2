use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<_> = std::env::args_os().collect();
    let env_config = std::env::var_os(veto_cli::CONFIG_ENV).map(Into::into);
    let mut stdout = std::io::stdout().lock();
    match veto_cli::run(&args, env_config, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
