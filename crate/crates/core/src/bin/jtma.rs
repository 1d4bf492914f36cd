fn main() {
    std::process::exit(jtma::cli::main_with_args(std::env::args_os()));
}
