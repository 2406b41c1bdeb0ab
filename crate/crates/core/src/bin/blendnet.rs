fn main() {
    std::process::exit(blendnet::cli::main_with_args(std::env::args_os()));
}
