fn main() {
    std::process::exit(pfid::cli::main_with_args(std::env::args_os()));
}
