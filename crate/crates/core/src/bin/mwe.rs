fn main() {
    std::process::exit(meta_ensembler::cli::run_cli(std::env::args_os()));
}
