fn main() {
    std::process::exit(tabletune::cli::run_command(std::env::args_os()));
}
