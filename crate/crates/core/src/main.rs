fn main() {
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = todyformer::cli::run_from(std::env::args_os(), &mut stdout) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
