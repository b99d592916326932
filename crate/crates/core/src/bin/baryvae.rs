fn main() {
    std::process::exit(baryvae::cli::run(std::env::args_os()));
}
