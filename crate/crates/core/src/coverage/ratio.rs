use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// An exact coverage ratio `covered / total`, `total > 0`.
///
/// Comparisons use cross multiplication so that threshold checks never depend
/// on floating-point rounding.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CoverageRatio {
    pub covered: u64,
    pub total: u64,
}

impl CoverageRatio {
    /// Panics if `total == 0` or `covered > total`.
    pub fn new(covered: u64, total: u64) -> Self {
        assert!(total > 0, "coverage ratio with empty universe");
        assert!(covered <= total, "covered exceeds total");
        CoverageRatio { covered, total }
    }

    pub fn is_zero(&self) -> bool {
        self.covered == 0
    }

    pub fn is_full(&self) -> bool {
        self.covered == self.total
    }

    pub fn as_f64(&self) -> f64 {
        self.covered as f64 / self.total as f64
    }

    /// `true` iff `self >= num / den`.
    pub fn at_least(&self, num: u64, den: u64) -> bool {
        (self.covered as u128) * (den as u128) >= (num as u128) * (self.total as u128)
    }

    /// Percentage rounded to one decimal, e.g. `"75.0"`.
    pub fn percent(&self) -> String {
        // Round half up on the exact rational.
        let tenths = (self.covered as u128 * 2000 + self.total as u128) / (2 * self.total as u128);
        format!("{}.{}", tenths / 10, tenths % 10)
    }
}

impl PartialEq for CoverageRatio {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for CoverageRatio {}

impl PartialOrd for CoverageRatio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CoverageRatio {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = self.covered as u128 * other.total as u128;
        let rhs = other.covered as u128 * self.total as u128;
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for CoverageRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({}%)", self.covered, self.total, self.percent())
    }
}
