fn main() {
    std::process::exit(omqa::cli::run(std::env::args_os()));
}
