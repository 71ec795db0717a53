use std::process::ExitCode;

fn main() -> ExitCode {
    fedfit::cli::main()
}
