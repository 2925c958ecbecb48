fn main() {
    std::process::exit(bevkernel::cli::run(std::env::args_os()));
}
