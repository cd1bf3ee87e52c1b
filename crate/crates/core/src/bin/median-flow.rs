fn main() {
    std::process::exit(median_flow::cli::main_with_args(std::env::args_os()));
}
