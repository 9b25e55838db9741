fn main() {
    std::process::exit(rnntrack::cli::run(std::env::args_os()));
}
