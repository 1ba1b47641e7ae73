fn main() {
    std::process::exit(stdgs::cli::dispatch(std::env::args_os()));
}
