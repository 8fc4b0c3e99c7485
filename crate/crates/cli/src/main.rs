fn main() {
    std::process::exit(funcregime_cli::run_cli(std::env::args_os()));
}
