fn main() -> std::process::ExitCode {
    perf_bridge::cli::main()
}
