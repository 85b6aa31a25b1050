fn main() {
    std::process::exit(capmin_cli::run(std::env::args_os()));
}
