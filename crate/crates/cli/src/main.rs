fn main() -> std::process::ExitCode {
    attn_marl_cli::main_with_args(std::env::args_os())
}
