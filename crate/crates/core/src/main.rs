fn main() { std::process::exit(weighted_fpp::cli::main_entry()); }
