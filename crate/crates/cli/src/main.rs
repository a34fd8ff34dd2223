fn main() {
    std::process::exit(biplanar_cli::main_with_args(std::env::args_os()));
}
