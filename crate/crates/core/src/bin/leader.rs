fn main() {
    std::process::exit(leader_core::cli::run(std::env::args_os()));
}
