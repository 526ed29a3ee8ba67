use clap::Parser;
use spatial_income_core::cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = cli.command.run() {
        eprintln!(
            "{}",
            serde_json::json!({ "error": { "stage": e.stage, "message": e.message } })
        );
        std::process::exit(1);
    }
}
