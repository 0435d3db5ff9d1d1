fn main() {
    std::process::exit(mrtrader_cli::run(std::env::args_os()));
}
