fn main() {
    std::process::exit(dualdet::cli::run(std::env::args_os()));
}
