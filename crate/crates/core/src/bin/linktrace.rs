fn main() {
    std::process::exit(linktrace::cli::run(std::env::args_os()));
}
