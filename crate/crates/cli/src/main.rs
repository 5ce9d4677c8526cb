use clap::error::ErrorKind;
use clap::Parser;
use lapool_cli::error::CliError;
use lapool_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("LAPOOL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => fail(&CliError::Usage(e.to_string().trim_end().to_string())),
    };
    match run(&cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => fail(&e),
    }
}

fn fail(e: &CliError) -> ! {
    eprintln!("{}", e.to_json());
    std::process::exit(e.exit_code())
}
