use clap::Parser;

use cidmad::cli::{error_line, execute, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CIDMAD_LOG", "info")).init();
    let cli = Cli::parse();
    if let Err(e) = execute(&cli) {
        eprintln!("{}", error_line(&e));
        std::process::exit(1);
    }
}
