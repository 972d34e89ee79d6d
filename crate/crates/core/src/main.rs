fn main() {
    std::process::exit(fgssa::cli::main());
}
