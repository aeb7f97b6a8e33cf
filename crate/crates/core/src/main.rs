fn main() {
    std::process::exit(ddunet::cli::main_with_args(std::env::args_os()));
}
