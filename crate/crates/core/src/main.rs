fn main() {
    std::process::exit(wcnet::cli::run(std::env::args_os()));
}
