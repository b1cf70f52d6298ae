//! Runs every acceptance criterion and prints one line per criterion.
//! Exits nonzero when any criterion fails or errors.

use std::process::ExitCode;

use osiwae::harness::checks::{run_criterion, CRITERIA};

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let mut failed = 0;
    for (id, name, _) in CRITERIA {
        match run_criterion(id, scratch.path()) {
            Ok(outcome) => {
                println!("{outcome}");
                failed += usize::from(!outcome.passed);
            }
            Err(e) => {
                println!("criterion {id} FAIL {name}: error: {e}");
                failed += 1;
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
