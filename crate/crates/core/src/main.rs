fn main() {
    std::process::exit(asyspa_lab::cli::main_from_env());
}
