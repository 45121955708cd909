fn main() {
    std::process::exit(stereopose::cli::run(std::env::args_os()));
}
