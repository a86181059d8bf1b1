use clap::Parser;

use panorad_cli::{config, execute, exit_code, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = match config::resolve_threads(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            log::error!("{e}");
            std::process::exit(exit_code(&e));
        }
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    std::process::exit(execute(&cli));
}
