fn main() -> std::process::ExitCode {
    nmfrank::cli::main_with(std::env::args_os())
}
