use clap::Parser;

fn main() {
    let cli = percodrift_cli::Cli::parse();
    std::process::exit(percodrift_cli::run(&cli));
}
