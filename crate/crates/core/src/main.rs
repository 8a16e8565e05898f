fn main() {
    std::process::exit(gemrec::cli::main());
}
