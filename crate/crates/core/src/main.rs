fn main() {
    std::process::exit(slcmm::cli::run(std::env::args_os()));
}
