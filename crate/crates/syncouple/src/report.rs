//! Check reports shared by the collection verifier and the Lyapunov
//! certifier: a flat list of named numeric checks with thresholds, plus an
//! overall verdict, serializable for the CLI.

use serde::{Deserialize, Serialize};

/// Version stamp written into every JSON document the crate emits.
pub const SCHEMA_VERSION: &str = "1";

/// One named check: `value` compared against `threshold` with the given
/// sense. `pass` is stored rather than recomputed so a serialized report is
/// self-contained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// "ge" when the check requires value >= threshold, "le" for <=.
    pub sense: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub schema_version: String,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl CheckReport {
    pub fn new() -> Self {
        CheckReport {
            schema_version: SCHEMA_VERSION.to_string(),
            checks: Vec::new(),
            pass: true,
        }
    }

    /// Record a check requiring `value >= threshold`.
    pub fn require_ge(&mut self, name: impl Into<String>, value: f64, threshold: f64) -> bool {
        let pass = value >= threshold && value.is_finite();
        self.push(name.into(), value, threshold, "ge", pass);
        pass
    }

    /// Record a check requiring `value <= threshold`.
    pub fn require_le(&mut self, name: impl Into<String>, value: f64, threshold: f64) -> bool {
        let pass = value <= threshold && value.is_finite();
        self.push(name.into(), value, threshold, "le", pass);
        pass
    }

    /// Record a strict inequality `lhs < rhs` with a slack guard relative to
    /// the scale of the two sides: slack >= 1e-12 * max(|lhs|, |rhs|).
    /// Guards against accepting values sitting on the boundary to within
    /// floating-point noise, at any magnitude.
    pub fn require_strictly_below(
        &mut self,
        name: impl Into<String>,
        lhs: f64,
        rhs: f64,
    ) -> bool {
        let slack = rhs - lhs;
        let needed = 1e-12 * lhs.abs().max(rhs.abs());
        let pass = slack > needed && slack.is_finite();
        self.push(name.into(), slack, needed, "ge", pass);
        pass
    }

    /// Record a strict positivity check `value > 0` (any representable
    /// positive value passes; the scale-relative guard is vacuous here).
    pub fn require_positive(&mut self, name: impl Into<String>, value: f64) -> bool {
        let pass = value > 0.0 && value.is_finite();
        self.push(name.into(), value, 0.0, "ge", pass);
        pass
    }

    fn push(&mut self, name: String, value: f64, threshold: f64, sense: &str, pass: bool) {
        self.checks.push(Check {
            name,
            value,
            threshold,
            sense: sense.to_string(),
            pass,
        });
        self.pass &= pass;
    }

    /// Merge another report's checks under a name prefix.
    pub fn absorb(&mut self, prefix: &str, other: CheckReport) {
        for mut c in other.checks {
            c.name = format!("{prefix}.{}", c.name);
            self.pass &= c.pass;
            self.checks.push(c);
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

impl Default for CheckReport {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_guard_is_scale_relative() {
        let mut r = CheckReport::new();
        // Comfortable margin at tiny scale passes.
        assert!(r.require_strictly_below("tiny", 1e-30, 2e-30));
        // Boundary-hugging value at unit scale fails.
        assert!(!r.require_strictly_below("hug", 1.0, 1.0 + 1e-15));
        assert!(!r.pass);
        assert_eq!(r.failures().count(), 1);
    }

    #[test]
    fn non_finite_never_passes() {
        let mut r = CheckReport::new();
        assert!(!r.require_ge("nan", f64::NAN, 0.0));
        assert!(!r.require_le("inf", f64::INFINITY, f64::INFINITY));
    }

    #[test]
    fn serializes_round_trip() {
        let mut r = CheckReport::new();
        r.require_ge("a", 2.0, 1.0);
        let s = serde_json::to_string(&r).unwrap();
        let back: CheckReport = serde_json::from_str(&s).unwrap();
        assert!(back.pass);
        assert_eq!(back.schema_version, SCHEMA_VERSION);
        assert_eq!(back.checks.len(), 1);
    }
}
