fn main() {
    std::process::exit(cpi::cli::main_with(std::env::args_os()));
}
