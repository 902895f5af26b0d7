fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MCLS_LOG", "warn")).init();
    std::process::exit(mcls_cli::run(std::env::args_os()));
}
