fn main() {
    std::process::exit(vattr_cli::run(std::env::args_os()));
}
