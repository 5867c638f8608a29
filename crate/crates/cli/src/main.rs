fn main() {
    std::process::exit(quakecheck_cli::run(std::env::args_os()));
}
