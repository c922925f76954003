use clap::Parser;

fn main() {
    std::process::exit(readout_cli::main_with(readout_cli::Cli::parse()));
}
