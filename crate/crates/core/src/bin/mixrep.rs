fn main() {
    std::process::exit(mixrep::harness::cli::run(std::env::args_os()));
}
