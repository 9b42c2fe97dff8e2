fn main() -> std::process::ExitCode {
    samesum_cli::run(std::env::args_os())
}
