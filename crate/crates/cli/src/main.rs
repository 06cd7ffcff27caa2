use std::process::exit;

fn main() {
    exit(scoreadv_cli::cli_main());
}
