fn main() {
    voicecloak::cli::init_logging();
    std::process::exit(voicecloak::cli::main_with_args(std::env::args_os()));
}
