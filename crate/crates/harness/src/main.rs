fn main() {
    std::process::exit(neurogen::main_with_args(std::env::args_os()));
}
