fn main() {
    std::process::exit(zlab::cli::run(std::env::args_os()));
}
