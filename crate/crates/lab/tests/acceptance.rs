//! Acceptance gate over the shipped configs. Prints one line per criterion
//! and exits non-zero if any criterion lands on the wrong side of its
//! expectation.
//!
//! Criteria in `EXPECTED_FAILURES` are known to fail at their stated
//! tolerance. They are still evaluated in full, and one that starts passing
//! is reported as unexpected so the list gets revisited.
//!
//! The family and kernel cache lives under the cargo target directory, so
//! reruns skip the ground-state continuation. PDE runs are shared between
//! criteria through the suite's in-process memo.

use std::process::ExitCode;

use nlslab::acceptance::{default_config_dir, Status, Suite, CRITERIA};
use nlslab::Cache;

/// The barrier residual decays like ε⁵, so the ε⁴-normalized constant
/// doubles with ε instead of settling.
const EXPECTED_FAILURES: [u8; 1] = [2];

fn main() -> ExitCode {
    let cache = Cache::new(concat!(env!("CARGO_TARGET_TMPDIR"), "/nlslab-cache"));
    let suite = Suite::new(default_config_dir(), cache);
    if let Err(e) = suite.validate() {
        println!("acceptance configs invalid: {e}");
        return ExitCode::FAILURE;
    }

    let mut unexpected = Vec::new();
    for (id, stem, _) in CRITERIA {
        let result = match suite.evaluate(id) {
            Ok(r) => r,
            Err(e) => {
                println!("criterion {id:02} ERROR {stem}: {e}");
                unexpected.push(id);
                continue;
            }
        };
        let expected = if EXPECTED_FAILURES.contains(&id) { Status::Fail } else { Status::Pass };
        let note = if result.status == expected {
            if expected == Status::Fail { " (expected)" } else { "" }
        } else {
            unexpected.push(id);
            " (unexpected)"
        };
        println!("{}{note} [{:.1}s]", result.line(), result.runtime_s);
    }

    if unexpected.is_empty() {
        println!("acceptance: all criteria as expected");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexpected outcome for criteria {unexpected:?}");
        ExitCode::FAILURE
    }
}
