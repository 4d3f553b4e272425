fn main() {
    bifactor_alm::cli::configure_threads();
    let code = bifactor_alm::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
