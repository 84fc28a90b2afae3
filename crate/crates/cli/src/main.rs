fn main() {
    std::process::exit(qlc_cli::run(std::env::args_os()));
}
