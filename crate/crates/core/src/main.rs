fn main() {
    std::process::exit(fracvisc::cli::run_cli(std::env::args_os()));
}
