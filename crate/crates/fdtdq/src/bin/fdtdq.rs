fn main() {
    std::process::exit(fdtdq::cli::main_with_args(std::env::args_os()));
}
