use clap::Parser;

use hetscene_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    match hetscene_cli::run(cli) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
