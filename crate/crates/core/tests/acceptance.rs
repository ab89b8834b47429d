//! Runs without the libtest harness so the per-criterion lines always reach
//! the output. `ACCEPTANCE_ONLY=1,3` selects criteria.

use std::process::ExitCode;

use brown_mde::acceptance::{self, ALL};

fn main() -> ExitCode {
    // `cargo test -- --list` only enumerates
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let ids: Vec<u8> = only.unwrap_or_else(|| ALL.to_vec());
    let mut failed = Vec::new();
    for id in ids {
        let out = acceptance::run(id);
        println!("{out}");
        if !out.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
