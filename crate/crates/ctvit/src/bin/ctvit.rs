fn main() {
    if let Err(e) = ctvit::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
