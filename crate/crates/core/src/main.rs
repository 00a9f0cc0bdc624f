fn main() -> std::process::ExitCode {
    bcompat::cli::main()
}
