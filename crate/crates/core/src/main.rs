fn main() {
    std::process::exit(bcs_tc::cli::main_with_args(std::env::args_os()));
}
