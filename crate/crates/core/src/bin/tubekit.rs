fn main() {
    std::process::exit(tubekit::cli::main_with_args(std::env::args_os()));
}
