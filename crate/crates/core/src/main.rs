use redactor::cli;

fn main() {
    if let Err(error) = cli::run() {
        eprintln!("error: {error}");
        std::process::exit(cli::exit_code(&error));
    }
}
