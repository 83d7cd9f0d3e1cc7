fn main() {
    std::process::exit(coupling_lab::cli::main_with(std::env::args_os()));
}
