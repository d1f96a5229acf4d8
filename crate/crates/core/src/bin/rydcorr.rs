fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(rydcorr::cli::main_with(&args));
}
