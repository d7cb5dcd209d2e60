fn main() {
    std::process::exit(dmu_cli::run(std::env::args_os()));
}
