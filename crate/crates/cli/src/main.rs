fn main() -> std::process::ExitCode {
    cadastre_cli::main_with_args(std::env::args_os())
}
