fn main() {
    std::process::exit(editproc::cli::run(std::env::args_os()));
}
