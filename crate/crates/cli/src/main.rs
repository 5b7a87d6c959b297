use std::process::ExitCode;

use nsasym_cli::config::{command, parse_config, Parsed, OUT_ENV};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let env_out = std::env::var(OUT_ENV).ok();
    match parse_config(&argv, env_out.as_deref()) {
        Ok(Parsed::Info(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(Parsed::Run(cfg)) => ExitCode::from(nsasym_cli::run(&cfg) as u8),
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.trim_end());
            if !msg.contains("Usage:") {
                eprintln!("\n{}", command().render_usage());
            }
            ExitCode::from(2)
        }
    }
}
