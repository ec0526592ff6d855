fn main() {
    std::process::exit(nlos_autocal_cli::run(std::env::args_os()));
}
