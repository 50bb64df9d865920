fn main() {
    std::process::exit(diffdepth::harness::cli::main());
}
