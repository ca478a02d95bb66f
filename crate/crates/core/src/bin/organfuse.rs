fn main() {
    std::process::exit(organfuse::cli::run(std::env::args_os()));
}
