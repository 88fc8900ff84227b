fn main() {
    std::process::exit(cssl::cli::run(std::env::args_os()));
}
