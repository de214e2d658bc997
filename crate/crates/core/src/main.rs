fn main() {
    std::process::exit(metastyle::cli::run(std::env::args_os()));
}
