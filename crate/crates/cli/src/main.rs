fn main() {
    std::process::exit(csnet_cli::run(std::env::args_os()));
}
