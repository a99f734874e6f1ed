fn main() {
    std::process::exit(sonofed_cli::run(std::env::args_os()));
}
