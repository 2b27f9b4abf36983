fn main() {
    std::process::exit(mimo_pac::cli::run(std::env::args_os()));
}
