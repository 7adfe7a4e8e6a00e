use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match bezsketch_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            if usage {
                e.exit();
            }
            let _ = e.print();
            let err = bezsketch_cli::error::CliError::config(e.kind().to_string());
            eprintln!("{}", err.to_json_line());
            std::process::exit(err.category.exit_code());
        }
    };
    if let Err(e) = bezsketch_cli::run(cli) {
        log::error!("{e}");
        eprintln!("{}", e.to_json_line());
        std::process::exit(e.category.exit_code());
    }
}
