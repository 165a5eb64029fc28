fn main() {
    std::process::exit(bidvl::cli::run(std::env::args_os()));
}
