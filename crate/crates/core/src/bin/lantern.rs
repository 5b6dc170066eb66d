fn main() {
    std::process::exit(lantern::cli::main_with_args(std::env::args_os()));
}
