//! The coefficient-set file: a JSON document holding K x C blocks of V x V
//! numeric arrays, each block row-major with a final cell of zero (only
//! V^2-1 coefficients exist per process), plus search metadata when the set
//! was produced by [`crate::search::find_coefficients`].
//!
//! Loading then saving is value-identical. Every block's first V^2-1 raster
//! entries must sum to 1 within 5e-3; published four-decimal listings only
//! reach that tolerance, self-generated sets satisfy 1e-9.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ar_core::ARCoefficients;
use crate::error::{Error, Result};
use crate::search::{ARProcessSet, ProcessEntry, SearchMetadata};

pub const SET_FORMAT: &str = "ar-process-set";
pub const SET_VERSION: u32 = 1;

/// Sum tolerance applied when loading any block.
pub const FIXTURE_SUM_TOLERANCE: f64 = 5e-3;

/// Sum tolerance self-generated sets are held to.
pub const GENERATED_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SetFileJson {
    format: String,
    version: u32,
    window_side: usize,
    classes: usize,
    channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stability_trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stability_norm_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probe_height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probe_width: Option<usize>,
    /// Per flat entry: seed of the diversity probe plane.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probe_seeds: Option<Vec<u64>>,
    /// Per flat entry: candidate index within the search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attempts: Option<Vec<u64>>,
    /// K x C x V x V nested arrays, final cell of each block zero.
    coefficients: Vec<Vec<Vec<Vec<f64>>>>,
}

fn block_to_coefficients(block: &[Vec<f64>], v: usize, label: &str) -> Result<ARCoefficients> {
    if block.len() != v || block.iter().any(|row| row.len() != v) {
        return Err(Error::InvalidFormat(format!("{label}: block is not {v}x{v}")));
    }
    let flat: Vec<f64> = block.iter().flatten().copied().collect();
    let last = flat[v * v - 1];
    if last.abs() > 1e-12 {
        return Err(Error::InvalidFormat(format!(
            "{label}: final block cell must be 0, got {last}"
        )));
    }
    let beta = flat[..v * v - 1].to_vec();
    if beta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidFormat(format!("{label}: non-finite coefficient")));
    }
    let sum: f64 = beta.iter().sum();
    if (sum - 1.0).abs() > FIXTURE_SUM_TOLERANCE {
        return Err(Error::InvalidFormat(format!(
            "{label}: coefficients sum to {sum}, expected 1 within {FIXTURE_SUM_TOLERANCE}"
        )));
    }
    ARCoefficients::new(beta, v)
}

fn coefficients_to_block(coeffs: &ARCoefficients) -> Vec<Vec<f64>> {
    let v = coeffs.window_side();
    let mut flat = coeffs.beta().to_vec();
    flat.push(0.0);
    flat.chunks(v).map(|row| row.to_vec()).collect()
}

/// Parse a coefficient-set document from JSON text.
pub fn parse_set(text: &str) -> Result<ARProcessSet> {
    let json: SetFileJson = serde_json::from_str(text)
        .map_err(|e| Error::InvalidFormat(format!("coefficient set: {e}")))?;
    if json.format != SET_FORMAT {
        return Err(Error::InvalidFormat(format!("unknown format '{}'", json.format)));
    }
    if json.version != SET_VERSION {
        return Err(Error::InvalidFormat(format!("unsupported version {}", json.version)));
    }
    let v = json.window_side;
    if v < 2 {
        return Err(Error::InvalidFormat("window_side must be at least 2".into()));
    }
    if json.coefficients.len() != json.classes {
        return Err(Error::InvalidFormat(format!(
            "expected {} classes of blocks, found {}",
            json.classes,
            json.coefficients.len()
        )));
    }
    let flat_len = json.classes * json.channels;
    let mut entries = Vec::with_capacity(flat_len);
    for (k, class_blocks) in json.coefficients.iter().enumerate() {
        if class_blocks.len() != json.channels {
            return Err(Error::InvalidFormat(format!(
                "class {k}: expected {} channel blocks, found {}",
                json.channels,
                class_blocks.len()
            )));
        }
        for (c, block) in class_blocks.iter().enumerate() {
            let label = format!("class{k}.ch{c}");
            let coefficients = block_to_coefficients(block, v, &label)?;
            entries.push(ProcessEntry { coefficients, probe_seed: None, attempt: None });
        }
    }
    if let Some(seeds) = &json.probe_seeds {
        if seeds.len() != flat_len {
            return Err(Error::InvalidFormat("probe_seeds length mismatch".into()));
        }
        for (entry, &seed) in entries.iter_mut().zip(seeds) {
            entry.probe_seed = Some(seed);
        }
    }
    if let Some(attempts) = &json.attempts {
        if attempts.len() != flat_len {
            return Err(Error::InvalidFormat("attempts length mismatch".into()));
        }
        for (entry, &attempt) in entries.iter_mut().zip(attempts) {
            entry.attempt = Some(attempt);
        }
    }
    let metadata = match (json.master_seed, json.threshold) {
        (Some(master_seed), Some(threshold)) => Some(SearchMetadata {
            master_seed,
            threshold,
            stability_trials: json.stability_trials.unwrap_or(3),
            stability_norm_bound: json.stability_norm_bound.unwrap_or(1e4),
            probe_height: json.probe_height.unwrap_or(36),
            probe_width: json.probe_width.unwrap_or(36),
        }),
        _ => None,
    };
    Ok(ARProcessSet::from_parts(v, json.classes, json.channels, entries, metadata))
}

/// Serialize a process set to JSON text (pretty-printed, trailing newline).
pub fn render_set(set: &ARProcessSet) -> String {
    let mut coefficients = Vec::with_capacity(set.num_classes());
    for class in 0..set.num_classes() {
        let mut row = Vec::with_capacity(set.channels());
        for channel in 0..set.channels() {
            let flat = class * set.channels() + channel;
            row.push(coefficients_to_block(&set.entry(flat).coefficients));
        }
        coefficients.push(row);
    }
    let probe_seeds: Option<Vec<u64>> =
        set.entries().iter().map(|e| e.probe_seed).collect::<Option<Vec<_>>>();
    let attempts: Option<Vec<u64>> =
        set.entries().iter().map(|e| e.attempt).collect::<Option<Vec<_>>>();
    let json = SetFileJson {
        format: SET_FORMAT.to_string(),
        version: SET_VERSION,
        window_side: set.window_side(),
        classes: set.num_classes(),
        channels: set.channels(),
        threshold: set.metadata().map(|m| m.threshold),
        master_seed: set.metadata().map(|m| m.master_seed),
        stability_trials: set.metadata().map(|m| m.stability_trials),
        stability_norm_bound: set.metadata().map(|m| m.stability_norm_bound),
        probe_height: set.metadata().map(|m| m.probe_height),
        probe_width: set.metadata().map(|m| m.probe_width),
        probe_seeds,
        attempts,
        coefficients,
    };
    let mut text = serde_json::to_string_pretty(&json).expect("set serializes");
    text.push('\n');
    text
}

pub fn load_set(path: &Path) -> Result<ARProcessSet> {
    let text = std::fs::read_to_string(path)?;
    parse_set(&text)
}

pub fn save_set(set: &ARProcessSet, path: &Path) -> Result<()> {
    std::fs::write(path, render_set(set))?;
    Ok(())
}

/// The ten published three-channel AR(8) processes bundled with the crate.
pub const PUBLISHED_SET_JSON: &str = include_str!("../fixtures/published_ar_processes.json");

/// Parse the bundled published processes (10 classes x 3 channels).
pub fn published_process_set() -> ARProcessSet {
    parse_set(PUBLISHED_SET_JSON).expect("bundled fixture parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{find_coefficients, SearchConfig};

    #[test]
    fn published_fixture_loads() {
        let set = published_process_set();
        assert_eq!(set.num_classes(), 10);
        assert_eq!(set.channels(), 3);
        assert_eq!(set.window_side(), 3);
        assert_eq!(set.flat_len(), 30);
        // First block matches the listing head.
        let beta = set.process(0, 0).unwrap().beta();
        assert_eq!(beta[0], 0.1561);
        assert_eq!(beta[1], -0.0710);
        assert_eq!(beta[7], 0.0226);
    }

    #[test]
    fn all_published_blocks_sum_to_one_within_tolerance() {
        let set = published_process_set();
        for i in 0..set.flat_len() {
            let sum = set.entry(i).coefficients.sum();
            assert!(
                (sum - 1.0).abs() <= FIXTURE_SUM_TOLERANCE,
                "{}: sum {sum}",
                set.entry_label(i)
            );
        }
    }

    #[test]
    fn round_trip_is_value_identical() {
        let set = published_process_set();
        let text = render_set(&set);
        let again = parse_set(&text).unwrap();
        for i in 0..set.flat_len() {
            assert_eq!(set.entry(i).coefficients.beta(), again.entry(i).coefficients.beta());
        }
        // Rendering a parsed render is byte-identical.
        assert_eq!(text, render_set(&again));
    }

    #[test]
    fn search_output_round_trips_with_metadata() {
        let set = find_coefficients(&SearchConfig::new(2, 1, 0.5, 31)).unwrap();
        let text = render_set(&set);
        let again = parse_set(&text).unwrap();
        assert_eq!(set.metadata(), again.metadata());
        for i in 0..set.flat_len() {
            assert_eq!(set.entry(i).coefficients.beta(), again.entry(i).coefficients.beta());
            assert_eq!(set.entry(i).probe_seed, again.entry(i).probe_seed);
            assert_eq!(set.entry(i).attempt, again.entry(i).attempt);
            let sum = again.entry(i).coefficients.sum();
            assert!((sum - 1.0).abs() <= GENERATED_SUM_TOLERANCE);
        }
    }

    #[test]
    fn malformed_documents_are_rejected() {
        assert!(parse_set("{}").is_err());
        let mut bad = serde_json::from_str::<serde_json::Value>(PUBLISHED_SET_JSON).unwrap();
        bad["coefficients"][0][0][2][2] = serde_json::json!(0.5);
        assert!(matches!(
            parse_set(&bad.to_string()),
            Err(Error::InvalidFormat(msg)) if msg.contains("final block cell")
        ));
        let mut badsum = serde_json::from_str::<serde_json::Value>(PUBLISHED_SET_JSON).unwrap();
        badsum["coefficients"][3][1][0][0] = serde_json::json!(9.0);
        assert!(matches!(
            parse_set(&badsum.to_string()),
            Err(Error::InvalidFormat(msg)) if msg.contains("sum")
        ));
    }
}
