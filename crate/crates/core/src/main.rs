fn main() {
    std::process::exit(xlrag::cli::main(std::env::args_os()));
}
