fn main() -> std::process::ExitCode {
    bilevel_bench::cli::main()
}
