fn main() {
    std::process::exit(crowdsim::cli::cli_main(std::env::args_os()));
}
