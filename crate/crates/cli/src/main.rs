use clap::Parser;

fn main() {
    let cli = heatdbc_cli::Cli::parse();
    std::process::exit(heatdbc_cli::run(&cli));
}
