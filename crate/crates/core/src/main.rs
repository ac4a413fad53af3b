fn main() {
    std::process::exit(fedsfr::cli::run(std::env::args_os()));
}
