fn main() {
    std::process::exit(hc_eqtl::cli::run(std::env::args_os()));
}
