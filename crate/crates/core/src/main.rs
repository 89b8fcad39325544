fn main() {
    std::process::exit(vscstab::cli::run(std::env::args_os()));
}
