fn main() {
    std::process::exit(shiftgame::cli::run(std::env::args().collect()));
}
