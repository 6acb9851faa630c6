//! One line per acceptance criterion; exits non-zero if any fails.
//!
//! `PLBK_ACCEPTANCE=1,2,9` restricts the run to the listed criteria.

use plbk::selfcheck::{run, PlanExpectation, CRITERIA};

fn main() {
    let selected: Vec<usize> = match std::env::var("PLBK_ACCEPTANCE") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => CRITERIA.to_vec(),
    };
    let mut failed = 0;
    for id in selected {
        let result = run(id, &PlanExpectation::PUBLISHED);
        println!("{result}");
        if !result.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
