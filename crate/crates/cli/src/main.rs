fn main() {
    std::process::exit(mvdist_cli::main_with_args(std::env::args_os()));
}
