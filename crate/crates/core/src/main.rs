fn main() {
    std::process::exit(flowuq::cli::main_with_args(std::env::args_os()));
}
