//! Runs the registered verification checks and reports the worst error of
//! each.

use std::io::Write;
use std::time::Instant;

use csnet_core::verify::{default_checks, Check, CheckOutcome};

use crate::{invalid, CmdResult, Failure};

/// Evaluates `checks`, writing one line per check to `out`. Fails naming
/// every check that did not pass.
pub fn run_checks(checks: &[Check], tol: Option<f64>, out: &mut dyn Write) -> Result<Vec<CheckOutcome>, Failure> {
    if let Some(t) = tol {
        if !(t >= 0.0) {
            return Err(invalid(format!("--tol must be >= 0, got {t}")));
        }
    }
    let mut outcomes = Vec::with_capacity(checks.len());
    for check in checks {
        let start = Instant::now();
        let o = check.evaluate(tol);
        let _ = writeln!(
            out,
            "{:<4} {:<24} worst {:.3e}  tol {:.1e}  {:.1}s  {}",
            if o.passed { "ok" } else { "FAIL" },
            o.name,
            o.worst,
            o.tol,
            start.elapsed().as_secs_f64(),
            o.detail
        );
        outcomes.push(o);
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    if failed.is_empty() {
        Ok(outcomes)
    } else {
        Err(Failure::Runtime(format!("gradcheck failed: {}", failed.join(", "))))
    }
}

pub fn cmd_gradcheck(tol: Option<f64>) -> CmdResult {
    run_checks(&default_checks(), tol, &mut std::io::stderr()).map(|_| ())
}
