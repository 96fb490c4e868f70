fn main() {
    std::process::exit(mechforge::cli::run(std::env::args_os()));
}
