fn main() {
    std::process::exit(cellsplit::cli::run(std::env::args_os().collect()));
}
