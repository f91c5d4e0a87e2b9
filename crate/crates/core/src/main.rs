fn main() {
    std::process::exit(densenav::cli::main_entry());
}
