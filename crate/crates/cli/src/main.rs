fn main() {
    std::process::exit(lsrtr_cli::app::run(std::env::args_os()));
}
