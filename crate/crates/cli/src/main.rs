fn main() {
    std::process::exit(stepmt_cli::cli_main(std::env::args_os()));
}
