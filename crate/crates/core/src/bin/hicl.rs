fn main() {
    std::process::exit(hicl::cli::run(std::env::args_os()));
}
