fn main() {
    std::process::exit(abreu_core::cli::run(std::env::args_os()));
}
