fn main() {
    std::process::exit(mcca_cli::run(std::env::args_os()));
}
