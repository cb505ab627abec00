fn main() {
    let code = trkt::cli::run(std::env::args_os());
    std::process::exit(code);
}
