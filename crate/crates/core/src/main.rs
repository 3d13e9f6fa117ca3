use std::process::ExitCode;

fn main() -> ExitCode {
    lvic::cli::main()
}
