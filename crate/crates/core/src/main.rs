fn main() {
    std::process::exit(dve_lab::cli::run(std::env::args_os()));
}
