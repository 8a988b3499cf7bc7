use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FilterConfig {
    pub max_non_alnum_ratio: f64,
    pub max_repeated_line_fraction: f64,
    /// Case-insensitive substrings; empty by default.
    pub boilerplate: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { max_non_alnum_ratio: 0.45, max_repeated_line_fraction: 0.7, boilerplate: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FilterRule {
    Empty,
    NonAlnumRatio,
    RepeatedLineFraction,
    Boilerplate,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterReport {
    pub sample_id: String,
    pub passed: bool,
    pub failed_rules: Vec<FilterRule>,
    pub non_alnum_ratio: f64,
    pub repeated_line_fraction: f64,
    pub boilerplate_hits: Vec<String>,
}

/// Non-alphanumeric, non-whitespace characters over non-whitespace characters.
pub fn non_alnum_ratio(text: &str) -> f64 {
    let (mut bad, mut total) = (0usize, 0usize);
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        if !c.is_alphanumeric() {
            bad += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

/// `1 − distinct/total` over lines.
pub fn repeated_line_fraction(text: &str) -> f64 {
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return 0.0;
    }
    let distinct: BTreeSet<&str> = lines.iter().copied().collect();
    1.0 - distinct.len() as f64 / lines.len() as f64
}

pub fn heuristic_filter(sample_id: &str, text: &str, config: &FilterConfig) -> FilterReport {
    let mut failed = Vec::new();
    if text.trim().is_empty() {
        failed.push(FilterRule::Empty);
    }
    let nar = non_alnum_ratio(text);
    if nar > config.max_non_alnum_ratio {
        failed.push(FilterRule::NonAlnumRatio);
    }
    let rlf = repeated_line_fraction(text);
    if rlf > config.max_repeated_line_fraction {
        failed.push(FilterRule::RepeatedLineFraction);
    }
    let lower = text.to_lowercase();
    let hits: Vec<String> =
        config.boilerplate.iter().filter(|b| !b.is_empty() && lower.contains(&b.to_lowercase())).cloned().collect();
    if !hits.is_empty() {
        failed.push(FilterRule::Boilerplate);
    }
    FilterReport {
        sample_id: sample_id.into(),
        passed: failed.is_empty(),
        failed_rules: failed,
        non_alnum_ratio: nar,
        repeated_line_fraction: rlf,
        boilerplate_hits: hits,
    }
}
