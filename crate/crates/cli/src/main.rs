fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRAPHERE_LOG", "warn")).init();
    std::process::exit(graphere_cli::run(std::env::args_os()));
}
