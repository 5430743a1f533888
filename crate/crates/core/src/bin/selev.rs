fn main() {
    std::process::exit(selective_evidence::cli::run_from_args(std::env::args_os()));
}
