fn main() {
    std::process::exit(mira_core::cli::main());
}
