//! Runs the full gradient-check suite at f64 and prints one line per check.
//!
//! ```text
//! cargo run --release --example gradient_check [filter] [faulty-op]
//! ```

use clipscore::check::{run_suite, SuiteOptions, DEFAULT_TOLERANCE};

fn main() -> clipscore::Result<()> {
    let mut args = std::env::args().skip(1);
    let opts = SuiteOptions { filter: args.next(), fault: args.next(), ..SuiteOptions::default() };
    let start = std::time::Instant::now();
    let results = run_suite(&opts, |r| {
        let verdict = if r.passed(DEFAULT_TOLERANCE) { "ok" } else { "FAILED" };
        println!("{:<28} max rel err {:.3e}  {verdict}", r.name, r.max_error);
    })?;
    let failed = results.iter().filter(|r| !r.passed(DEFAULT_TOLERANCE)).count();
    println!("{} checks, {failed} failed, {:.1?}", results.len(), start.elapsed());
    Ok(())
}
