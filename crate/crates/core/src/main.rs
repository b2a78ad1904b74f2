fn main() {
    std::process::exit(bnlab::cli::run(std::env::args_os()));
}
