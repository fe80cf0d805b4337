fn main() {
    std::process::exit(rapid_poisson::cli::run(std::env::args_os()));
}
