fn main() {
    std::process::exit(oqw::cli::main_with_args(std::env::args_os()));
}
