fn main() {
    std::process::exit(slabgas_cli::run(std::env::args_os()));
}
