fn main() {
    let env = |k: &str| std::env::var(k).ok();
    std::process::exit(paeff_core::cli::run(std::env::args_os(), &env));
}
