fn main() -> std::process::ExitCode {
    adaptgraph::cli::main()
}
