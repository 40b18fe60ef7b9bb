fn main() {
    std::process::exit(delayprop::cli::main());
}
