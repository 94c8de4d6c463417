fn main() {
    std::process::exit(assoc3d_cli::run(std::env::args_os()));
}
