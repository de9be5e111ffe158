fn main() {
    std::process::exit(reeblab::cli::main_entry());
}
