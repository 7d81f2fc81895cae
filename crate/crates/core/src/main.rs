use clap::Parser;

fn main() {
    let cli = adgen::cli::Cli::parse();
    if let Err(err) = adgen::cli::run(cli) {
        eprintln!("error: {err}");
        let mut source = std::error::Error::source(&err);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(err.exit_code());
    }
}
