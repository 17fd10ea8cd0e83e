fn main() {
    std::process::exit(depthseed::cli::main_with_args(std::env::args_os()));
}
