fn main() {
    if let Err(e) = kgvqa::cli::run() {
        eprintln!("error: {}", e);
        std::process::exit(1);
    }
}
