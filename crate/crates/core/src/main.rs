fn main() {
    std::process::exit(satstab::cli::main_with_args(std::env::args_os()));
}
