fn main() {
    std::process::exit(fgmatch::cli::run(std::env::args_os()));
}
