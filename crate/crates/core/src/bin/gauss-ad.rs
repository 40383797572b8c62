fn main() {
    std::process::exit(gauss_ad::cli::main_with_args(std::env::args_os()));
}
