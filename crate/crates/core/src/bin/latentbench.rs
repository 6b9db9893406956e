fn main() {
    std::process::exit(latentbench::harness::cli::cli(std::env::args_os()));
}
