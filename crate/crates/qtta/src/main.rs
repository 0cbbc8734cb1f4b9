fn main() {
    std::process::exit(qtta::cli::main_with_args(std::env::args_os()));
}
