fn main() {
    std::process::exit(exitperron::run(std::env::args_os()));
}
