fn main() {
    std::process::exit(adc_cli::run(std::env::args_os()));
}
