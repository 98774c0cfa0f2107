fn main() {
    std::process::exit(mcsforge::cli::main_with_args(std::env::args_os()));
}
