fn main() {
    std::process::exit(collocate::cli::main_with_args(std::env::args_os()));
}
