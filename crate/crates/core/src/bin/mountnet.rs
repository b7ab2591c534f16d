fn main() {
    std::process::exit(mountnet::cli::main_with_args(std::env::args_os()));
}
