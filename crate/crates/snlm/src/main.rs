fn main() {
    std::process::exit(snlm::cli::main(std::env::args_os()));
}
