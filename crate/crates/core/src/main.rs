fn main() {
    std::process::exit(trajrecon::cli::run(std::env::args_os()));
}
