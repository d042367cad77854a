//! Runs every acceptance criterion and prints one verdict line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use vck_core::verify::{run_all, write_report};

fn main() -> ExitCode {
    let start = Instant::now();
    let reports = run_all(20_240_601);
    for r in &reports {
        println!("{r}");
    }
    write_report(&reports, std::io::stdout()).expect("stdout is writable");
    println!(
        "acceptance wall time: {:.1} s",
        start.elapsed().as_secs_f64()
    );
    if reports.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
