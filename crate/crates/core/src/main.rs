fn main() {
    std::process::exit(reticount::cli::run());
}
