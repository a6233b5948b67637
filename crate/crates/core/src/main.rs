use clap::Parser;

fn main() {
    let cli = cutoff_wave::cli::Cli::parse();
    std::process::exit(cutoff_wave::cli::main_with(cli));
}
