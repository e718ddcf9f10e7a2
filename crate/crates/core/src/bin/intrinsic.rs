fn main() -> std::process::ExitCode {
    reflectance_prior::cli::main()
}
