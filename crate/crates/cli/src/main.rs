fn main() {
    std::process::exit(mfpa_cli::run(std::env::args_os()));
}
