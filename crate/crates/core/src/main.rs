fn main() -> std::process::ExitCode {
    trajaudit::cli::main_with_args(std::env::args_os())
}
