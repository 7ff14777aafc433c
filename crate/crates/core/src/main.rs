use clap::Parser;

fn main() {
    // Die quietly on SIGPIPE so piping into `head` works as expected.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = ariadne_mem::cli::Cli::parse();
    match ariadne_mem::cli::run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(error) => {
            eprintln!("error: {error}");
            std::process::exit(2);
        }
    }
}
