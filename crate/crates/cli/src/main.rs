use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let env = |k: &str| std::env::var(k).ok();
    let (mut out, mut err) = (std::io::stdout(), std::io::stderr());
    let mut io = groundmem_cli::Io { out: &mut out, err: &mut err, env: &env };
    ExitCode::from(groundmem_cli::run(std::env::args_os(), &mut io))
}
