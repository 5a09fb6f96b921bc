use clap::Parser;

fn main() {
    let cli = actionhe_cli::Cli::parse();
    if let Err(e) = actionhe_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(actionhe_cli::exit_code(&e));
    }
}
