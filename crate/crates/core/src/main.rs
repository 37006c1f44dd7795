fn main() -> std::process::ExitCode {
    aet_core::cli::main()
}
