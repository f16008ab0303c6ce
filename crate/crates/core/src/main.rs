fn main() {
    std::process::exit(confocal_hmc::harness::cli::cli_main(std::env::args_os()));
}
