fn main() {
    std::process::exit(covflow::pipeline::cli::run(std::env::args_os()));
}
