fn main() {
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let code = lrb_cli::run_cli(std::env::args_os(), &mut out, &mut err);
    std::process::exit(code);
}
