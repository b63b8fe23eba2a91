fn main() {
    std::process::exit(mutualgan::cli::main_with(std::env::args_os()));
}
