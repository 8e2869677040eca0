fn main() {
    std::process::exit(zosnas::cli::run(std::env::args_os()));
}
