//! Check reports: one comma-separated row per statistical check.
//!
//! Schema: `check,model,params,estimate,stderr,target,tolerance,n,discarded,verdict`.
//! The `params` field uses `;`-separated `key=value` pairs so rows never
//! need quoting. Numbers are printed in shortest round-trip form, so a row
//! is byte-identical whenever the underlying bits are.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// Failed once, passed on the rerun with a fresh substream.
    Flaky,
    Fail,
    /// Not enough effective samples to decide.
    Inconclusive,
    /// Check does not apply (e.g. limit theorems for λ ≤ 0).
    Refused,
}

impl Verdict {
    /// Whether this verdict should fail a run.
    pub fn is_failure(self) -> bool {
        matches!(self, Verdict::Fail)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Pass => "pass",
            Verdict::Flaky => "flaky",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
            Verdict::Refused => "refused",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone)]
pub struct CheckRow {
    pub check: String,
    pub model: String,
    pub params: String,
    pub estimate: f64,
    pub stderr: f64,
    pub target: f64,
    pub tolerance: f64,
    pub n: u64,
    pub discarded: u64,
    pub verdict: Verdict,
}

impl CheckRow {
    pub fn csv_header() -> &'static str {
        "check,model,params,estimate,stderr,target,tolerance,n,discarded,verdict"
    }

    pub fn csv_line(&self) -> String {
        debug_assert!(!self.check.contains(','));
        debug_assert!(!self.model.contains(','));
        debug_assert!(!self.params.contains(','));
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.check,
            self.model,
            self.params,
            self.estimate,
            self.stderr,
            self.target,
            self.tolerance,
            self.n,
            self.discarded,
            self.verdict
        )
    }
}

impl fmt::Display for CheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:28} {:8} estimate {:>13.6e} (se {:.3e})  target {:>13.6e} tol {:.3e}  n={} discarded={}  [{}]",
            self.check,
            self.model,
            self.estimate,
            self.stderr,
            self.target,
            self.tolerance,
            self.n,
            self.discarded,
            self.verdict
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_line_matches_schema() {
        let row = CheckRow {
            check: "size_bias".into(),
            model: "m2".into(),
            params: "F=constant_one;t=1".into(),
            estimate: 1.0,
            stderr: 0.0,
            target: 1.0,
            tolerance: 0.0,
            n: 10,
            discarded: 0,
            verdict: Verdict::Pass,
        };
        assert_eq!(
            row.csv_line(),
            "size_bias,m2,F=constant_one;t=1,1,0,1,0,10,0,pass"
        );
        assert_eq!(CheckRow::csv_header().split(',').count(), 10);
        assert_eq!(row.csv_line().split(',').count(), 10);
    }

    #[test]
    fn only_fail_is_failure() {
        assert!(Verdict::Fail.is_failure());
        for v in [
            Verdict::Pass,
            Verdict::Flaky,
            Verdict::Inconclusive,
            Verdict::Refused,
        ] {
            assert!(!v.is_failure());
        }
    }
}
