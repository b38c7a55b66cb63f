fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FSOSR_LOG", "warn")).init();
    std::process::exit(fsosr::cli::run(std::env::args_os()));
}
