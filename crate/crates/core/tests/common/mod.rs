//! Independent oracles shared by the integration tests and the acceptance
//! runner. Every check returns a [`Check`] instead of panicking so the
//! acceptance binary can report all of them.

#![allow(dead_code)]

pub mod cs;
pub mod fourier;
pub mod grad;
pub mod masks;
pub mod metrics;

use std::fmt::Display;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Display) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.to_string(),
        }
    }

    /// `value <= bound`, reported with both numbers.
    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::new(name, value <= bound, format!("{value:.3e} (bound {bound:.0e})"))
    }
}

/// Panics with every failing check listed.
pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
    assert!(!checks.is_empty());
}
