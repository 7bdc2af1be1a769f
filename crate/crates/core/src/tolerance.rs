use serde::{Deserialize, Serialize};

/// `|a - b| <= max(abs, rel * |b|)`, with `b` the reference value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const DEFAULT: Tolerance = Tolerance { abs: 1e-9, rel: 1e-4 };
    pub const EXACT: Tolerance = Tolerance { abs: 0.0, rel: 0.0 };

    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance { abs, rel }
    }

    pub fn is_valid(&self) -> bool {
        self.abs >= 0.0 && self.rel >= 0.0 && self.abs.is_finite() && self.rel.is_finite()
    }

    pub fn matches(&self, candidate: f64, reference: f64) -> bool {
        (candidate - reference).abs() <= self.abs.max(self.rel * reference.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::DEFAULT
    }
}
