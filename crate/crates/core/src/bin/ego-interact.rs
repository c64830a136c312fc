fn main() {
    let code = ego_interact::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
