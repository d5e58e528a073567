use clap::error::ErrorKind;
use clap::Parser;

use margnorm_cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // exit code 2 is reserved for non-convergence
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            std::process::exit(code);
        }
    };
    if let Err(failure) = run(cli) {
        eprintln!("margnorm: {failure}");
        std::process::exit(failure.exit_code());
    }
}
