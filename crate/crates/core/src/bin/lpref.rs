use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LPREF_LOG", "info")).init();
    let cli = match lpref::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // bad arguments are a validation failure; --help and --version are not
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let mut out = String::new();
    let result = lpref::cli::run(cli, &mut out);
    print!("{out}");
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(lpref::cli::exit_code(&e));
    }
}
