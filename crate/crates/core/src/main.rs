fn main() {
    std::process::exit(oncode::cli::main_with_args(std::env::args_os()));
}
