fn main() {
    std::process::exit(gexplain::cli::run(std::env::args_os()));
}
