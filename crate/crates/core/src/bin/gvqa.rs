fn main() {
    std::process::exit(gvqa::cli::main_with(std::env::args_os()));
}
