fn main() {
    std::process::exit(maxfusion::cli::main())
}
