fn main() {
    std::process::exit(habcov_cli::app::main_with_args(std::env::args_os()));
}
