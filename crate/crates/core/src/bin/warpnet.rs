fn main() {
    std::process::exit(warpnet::cli::main_with_args(std::env::args_os()));
}
