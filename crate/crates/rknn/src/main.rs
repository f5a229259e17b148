fn main() {
    std::process::exit(rknn::cli::run(std::env::args_os()));
}
