fn main() {
    std::process::exit(conelab::cli::main_with_args(std::env::args_os()));
}
