fn main() {
    std::process::exit(lasso_barrier::cli::run(std::env::args_os()));
}
