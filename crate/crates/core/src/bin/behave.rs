fn main() {
    std::process::exit(behave::cli::run(std::env::args_os()));
}
