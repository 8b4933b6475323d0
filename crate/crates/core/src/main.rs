fn main() {
    std::process::exit(lateindex::cli::main(std::env::args_os()));
}
