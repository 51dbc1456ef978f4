fn main() {
    std::process::exit(hjb_sl::cli::run(std::env::args_os()));
}
