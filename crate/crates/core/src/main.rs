fn main() {
    std::process::exit(aurl::cli::run(std::env::args_os()));
}
