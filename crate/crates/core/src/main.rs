fn main() {
    std::process::exit(noisy_channel::cli::run(std::env::args_os()));
}
