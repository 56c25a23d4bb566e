use clap::Parser;

fn main() {
    let cli = ctharm::cli::Cli::parse();
    if let Err(e) = ctharm::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
