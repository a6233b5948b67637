//! Verdicts and tabular output.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// One pass/fail finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    /// Plain statement of the checked property.
    pub claim: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Verdict {
    /// Passes when `|value - target| <= tolerance`.
    pub fn within(name: &str, claim: &str, value: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            claim: claim.into(),
            value,
            target,
            tolerance,
            pass: (value - target).abs() <= tolerance,
        }
    }

    /// Passes when `value <= target + tolerance`.
    pub fn at_most(name: &str, claim: &str, value: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            claim: claim.into(),
            value,
            target,
            tolerance,
            pass: value <= target + tolerance,
        }
    }

    /// Passes when `value >= target - tolerance`.
    pub fn at_least(name: &str, claim: &str, value: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            claim: claim.into(),
            value,
            target,
            tolerance,
            pass: value >= target - tolerance,
        }
    }

    /// Passes when `value > threshold` strictly.
    pub fn exceeds(name: &str, claim: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            claim: claim.into(),
            value,
            target: threshold,
            tolerance: 0.0,
            pass: value > threshold,
        }
    }

    /// Passes when `value < threshold` strictly.
    pub fn below(name: &str, claim: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            claim: claim.into(),
            value,
            target: threshold,
            tolerance: 0.0,
            pass: value < threshold,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

/// Writes a numeric table with a header row.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<f64>]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
