//! Dataset files and the bundled galaxy velocities.
//!
//! The on-disk format is one number per line. Blank lines and lines whose
//! first non-space character is `#` are skipped.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Dataset;

const GALAXY_TEXT: &str = include_str!("../data/galaxy.txt");
pub const GALAXY_SOURCE_NAME: &str = "galaxy";

/// Published symmetrized evidence estimates for the galaxy data, k = 2..8.
/// They were obtained under a prior whose hyperparameters are not public,
/// so they serve only as a side-by-side reference.
pub const GALAXY_REFERENCE_LOG_EVIDENCE: [(usize, f64); 7] = [
    (2, -115.68),
    (3, -103.35),
    (4, -102.66),
    (5, -101.93),
    (6, -102.88),
    (7, -105.48),
    (8, -108.44),
];

pub fn parse_dataset(text: &str, source_name: &str) -> Result<Dataset> {
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let v: f64 = trimmed.parse().map_err(|_| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            content: trimmed.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                content: trimmed.to_string(),
            });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "{source_name}: no observations"
        )));
    }
    Dataset::new(values)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

/// The 82 galaxy radial velocities, in units of 1000 km/s.
pub fn galaxy_fixture() -> Dataset {
    parse_dataset(GALAXY_TEXT, GALAXY_SOURCE_NAME).expect("bundled fixture parses")
}

/// Summary values recorded in the fixture header when it was created.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSummary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub fn galaxy_fixture_summary() -> FixtureSummary {
    let field = |name: &str| -> &str {
        let prefix = format!("# summary {name}:");
        GALAXY_TEXT
            .lines()
            .find_map(|l| l.strip_prefix(prefix.as_str()))
            .map(str::trim)
            .unwrap_or_else(|| panic!("fixture header lacks `{name}`"))
    };
    FixtureSummary {
        n: field("n").parse().expect("integer n"),
        mean: field("mean").parse().expect("numeric mean"),
        min: field("min").parse().expect("numeric min"),
        max: field("max").parse().expect("numeric max"),
    }
}
