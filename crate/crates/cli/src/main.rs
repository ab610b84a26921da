use clap::Parser;

fn main() {
    if let Err(e) = mckba_cli::run(mckba_cli::Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
