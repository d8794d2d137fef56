//! H1/N topology screening: persistent loops per series and a verdict.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::persistence::PersistenceDiagram;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Ratios at or below this are sparse.
    pub sparse: f64,
    /// Ratios at or above this are rich.
    pub rich: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { sparse: 0.3, rich: 0.4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Sparse,
    Borderline,
    Rich,
    /// Set by hand when the loop count is inflated by shared calendar periodicity.
    ArtifactSuspect,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Sparse => "sparse",
            Verdict::Borderline => "borderline",
            Verdict::Rich => "rich",
            Verdict::ArtifactSuspect => "artifact-suspect",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub n: usize,
    pub h1_count: usize,
    pub ratio: f64,
    pub verdict: Verdict,
    pub persistence_floor: f64,
    pub thresholds: Thresholds,
}

impl ScreeningReport {
    pub fn from_counts(n: usize, h1_count: usize, floor: f64, thresholds: Thresholds) -> Result<Self> {
        if n == 0 {
            return Err(contract("screening needs at least one series"));
        }
        let ratio = h1_count as f64 / n as f64;
        let verdict = if ratio >= thresholds.rich {
            Verdict::Rich
        } else if ratio <= thresholds.sparse {
            Verdict::Sparse
        } else {
            Verdict::Borderline
        };
        Ok(Self {
            n,
            h1_count,
            ratio,
            verdict,
            persistence_floor: floor,
            thresholds,
        })
    }

    pub fn mark_artifact_suspect(mut self) -> Self {
        self.verdict = Verdict::ArtifactSuspect;
        self
    }

    pub fn table_header() -> String {
        format!("{:<20} {:>8} {:>8} {:>8}  {}", "dataset", "N", "H1", "H1/N", "verdict")
    }

    pub fn table_row(&self, name: &str) -> String {
        format!(
            "{:<20} {:>8} {:>8} {:>8.2}  {}",
            name, self.n, self.h1_count, self.ratio, self.verdict
        )
    }
}

/// Counts H1 pairs with persistence strictly above `floor` and classifies the
/// ratio to `n`. Essential H1 classes count as infinitely persistent.
pub fn screen(diagram: &PersistenceDiagram, n: usize, floor: f64, thresholds: Thresholds) -> Result<ScreeningReport> {
    let h1_count = diagram.pairs(1).iter().filter(|p| p.persistence() > floor).count();
    ScreeningReport::from_counts(n, h1_count, floor, thresholds)
}
