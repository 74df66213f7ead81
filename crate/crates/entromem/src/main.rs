fn main() {
    std::process::exit(entromem::cli::dispatch(std::env::args_os()));
}
