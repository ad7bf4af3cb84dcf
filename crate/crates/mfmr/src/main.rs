fn main() {
    std::process::exit(mfmr::cli::run());
}
