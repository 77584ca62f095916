fn main() {
    std::process::exit(greenwash::cli::run(std::env::args_os()));
}
