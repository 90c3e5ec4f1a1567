fn main() -> std::process::ExitCode {
    apsrgen::cli::main()
}
