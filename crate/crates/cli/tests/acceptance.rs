//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! `TEMPFAIR_FULL=1` runs the RoC criteria with 100 replications. Passing
//! criterion numbers as arguments restricts the run.

use std::process::ExitCode;

use tempfair_cli::verify::{Suite, SuiteOptions, CRITERIA};

fn main() -> ExitCode {
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids = if only.is_empty() { CRITERIA.to_vec() } else { only };
    let opts = SuiteOptions::from_env();
    println!(
        "acceptance: {} criteria, RoC reps={}, flatness factor {}",
        ids.len(),
        opts.roc_reps(),
        opts.flatness_factor()
    );
    let suite = Suite::new(opts);
    let mut failed = Vec::new();
    for id in ids {
        let result = suite.run(id);
        println!("{result}");
        if !result.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
