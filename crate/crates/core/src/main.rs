fn main() {
    std::process::exit(salsign::cli::run(std::env::args()));
}
