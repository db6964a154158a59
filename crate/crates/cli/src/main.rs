fn main() {
    std::process::exit(tfbhtmm_cli::run(std::env::args_os()));
}
