fn main() {
    std::process::exit(cofprm::cli::main());
}
