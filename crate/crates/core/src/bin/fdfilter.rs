fn main() {
    std::process::exit(fdfilter::harness::cli::run_cli(std::env::args_os()));
}
