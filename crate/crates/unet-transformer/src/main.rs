fn main() {
    std::process::exit(unet_transformer::cli::run_from_env());
}
