use clap::Parser;

fn main() {
    let cli = cfl_sim::cli::Cli::parse();
    if let Err(e) = cfl_sim::cli::execute(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
