fn main() {
    std::process::exit(opmlab_cli::run(std::env::args_os()));
}
