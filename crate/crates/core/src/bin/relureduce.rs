fn main() {
    std::process::exit(relureduce::cli::run(std::env::args_os()));
}
