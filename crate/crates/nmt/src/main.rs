fn main() {
    std::process::exit(nmt::cli::main_with(std::env::args_os()));
}
