fn main() {
    std::process::exit(crossfusion::cli::run(std::env::args_os()));
}
