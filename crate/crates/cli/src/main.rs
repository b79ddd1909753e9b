use clap::Parser;
use pdplan::commands::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = serde_json::json!({ "error": { "kind": "usage", "message": e.render().to_string() } });
            eprintln!("{msg}");
            std::process::exit(2);
        }
    };
    if let Err(e) = run(cli) {
        let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
        let msg = serde_json::json!({ "error": { "kind": "runtime", "message": e.to_string(), "chain": chain } });
        eprintln!("{msg}");
        std::process::exit(1);
    }
}
