fn main() {
    std::process::exit(taxgraph::cli::run_from(std::env::args_os()));
}
