fn main() {
    std::process::exit(hubersl::cli::run(std::env::args_os()));
}
