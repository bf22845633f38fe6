fn main() {
    std::process::exit(dwvit::cli::main());
}
