fn main() -> std::process::ExitCode {
    rsbnet::cli::main()
}
