fn main() -> std::process::ExitCode {
    datamin::cli::run()
}
