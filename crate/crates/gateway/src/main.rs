fn main() -> std::process::ExitCode {
    aw_gateway::cli::main()
}
