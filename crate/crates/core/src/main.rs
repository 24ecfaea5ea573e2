use clap::Parser;

fn main() {
    let cli = selbias::cli::Cli::parse();
    std::process::exit(selbias::cli::run(cli));
}
