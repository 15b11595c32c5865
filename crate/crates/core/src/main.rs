fn main() { std::process::exit(slabwave::cli::run()); }
