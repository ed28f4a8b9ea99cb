fn main() {
    std::process::exit(feddkd::harness::run_cli(std::env::args_os()));
}
