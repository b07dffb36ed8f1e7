fn main() {
    std::process::exit(lqgbc_cli::main_with_args(std::env::args_os()));
}
