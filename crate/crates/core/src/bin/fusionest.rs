fn main() {
    std::process::exit(fusionest::cli::main_with_args(std::env::args_os()));
}
