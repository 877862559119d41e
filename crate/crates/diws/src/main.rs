fn main() {
    std::process::exit(diws::cli::main_with_args(std::env::args_os()));
}
