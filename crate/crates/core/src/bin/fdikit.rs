fn main() {
    std::process::exit(fdikit::cli::run_cli(std::env::args_os()));
}
