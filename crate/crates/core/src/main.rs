fn main() {
    std::process::exit(ocnash::cli::run(std::env::args()));
}
