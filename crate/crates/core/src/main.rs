fn main() {
    std::process::exit(kinsdf::cli::run(std::env::args_os()));
}
