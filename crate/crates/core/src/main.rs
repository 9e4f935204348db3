fn main() {
    std::process::exit(maternkit::cli::run(std::env::args_os()));
}
