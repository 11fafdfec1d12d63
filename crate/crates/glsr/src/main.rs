fn main() {
    std::process::exit(glsr::cli::run(std::env::args_os()));
}
