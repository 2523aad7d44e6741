fn main() {
    env_logger::init();
    std::process::exit(roleforge::cli::run(std::env::args_os()));
}
