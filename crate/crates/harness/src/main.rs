fn main() {
    std::process::exit(varreg_harness::cli::cli(std::env::args_os()));
}
