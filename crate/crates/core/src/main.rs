use clap::error::ErrorKind;
use clap::Parser;

use cvartune::cli::{self, Cli};
use cvartune::ErrorClass;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => ErrorClass::Usage.exit_code(),
            };
            std::process::exit(code);
        }
    };
    match cli::run(cli) {
        Ok(out) => print!("{out}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.class().exit_code());
        }
    }
}
