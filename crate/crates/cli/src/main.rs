fn main() {
    std::process::exit(optexec_cli::cli_entry(std::env::args_os()));
}
