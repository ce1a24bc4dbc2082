fn main() {
    std::process::exit(proto_extract::cli::run(std::env::args_os()));
}
