use clap::Parser;
use lcm_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = lcm_cli::commands::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
