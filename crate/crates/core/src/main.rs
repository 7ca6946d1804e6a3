fn main() {
    std::process::exit(cinemo::cli::main_with_args(std::env::args_os()));
}
