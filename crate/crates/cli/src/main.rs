fn main() {
    if let Err(e) = amortize_app::cli::init_threads() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
    std::process::exit(amortize_app::cli::main_with(std::env::args_os()));
}
