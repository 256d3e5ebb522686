fn main() {
    std::process::exit(uam_cli::run(std::env::args_os()));
}
