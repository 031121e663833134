fn main() -> std::process::ExitCode {
    voltarget::cli::main_with_args(std::env::args_os())
}
