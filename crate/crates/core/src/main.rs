fn main() {
    std::process::exit(perstree::cli::main_with_args(std::env::args_os()));
}
