fn main() {
    std::process::exit(bytetr_harness::cli::run(std::env::args_os()));
}
