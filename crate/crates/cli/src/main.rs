fn main() {
    std::process::exit(bayesboost_cli::main_with_args(std::env::args_os()));
}
