fn main() {
    std::process::exit(rubric_rl::cli::run(std::env::args_os()));
}
