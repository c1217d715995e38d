fn main() {
    std::process::exit(ftscope::cli::main_with_args(std::env::args_os().collect()));
}
