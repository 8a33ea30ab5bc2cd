use std::process::ExitCode;

fn main() -> ExitCode {
    basinscope_report::cli::main_with_args(std::env::args_os())
}
