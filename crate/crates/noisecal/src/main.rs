fn main() {
    env_logger::init();
    std::process::exit(noisecal::cli::main_with(std::env::args_os()));
}
