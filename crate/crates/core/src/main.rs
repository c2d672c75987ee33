fn main() {
    std::process::exit(sbtm::cli::main_with_args(std::env::args_os()));
}
