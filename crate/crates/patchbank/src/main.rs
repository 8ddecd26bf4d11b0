fn main() {
    std::process::exit(patchbank::cli::run(std::env::args_os()));
}
