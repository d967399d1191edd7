fn main() -> std::process::ExitCode {
    cokv::cli::run()
}
