fn main() {
    std::process::exit(sona_cli::main_with_args(std::env::args_os()));
}
