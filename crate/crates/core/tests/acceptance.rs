//! Acceptance criteria 1–7 at their stated budgets and tolerances. Prints one
//! PASS/FAIL line per criterion, followed by its individual checks, and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;

use lastexit::verify::{self, CriterionOutcome, VerifyConfig};

fn main() -> ExitCode {
    let cfg = VerifyConfig::default();
    let criteria: [fn(&VerifyConfig) -> CriterionOutcome; 7] = [
        verify::criterion_1,
        verify::criterion_2,
        verify::criterion_3,
        verify::criterion_4,
        verify::criterion_5,
        verify::criterion_6,
        verify::criterion_7,
    ];
    let mut failed = 0;
    for criterion in criteria {
        let outcome = criterion(&cfg);
        println!("{}", outcome.line());
        for check in &outcome.checks {
            println!("    {check}");
        }
        if !outcome.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
