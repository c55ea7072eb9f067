fn main() {
    std::process::exit(mpsts::cli::run_with_args(std::env::args_os()));
}
