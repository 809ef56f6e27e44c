use clap::Parser;
use clvf_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("clvf: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
