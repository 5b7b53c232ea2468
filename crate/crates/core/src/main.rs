fn main() {
    std::process::exit(dmac::cli::run(std::env::args_os()));
}
