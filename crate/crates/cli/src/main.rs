fn main() {
    std::process::exit(uniformid_cli::run(std::env::args_os()));
}
