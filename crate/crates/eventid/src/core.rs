//! Shared domain types: events, modes, decompositions, feature vectors.
//!
//! Everything here is immutable after construction and safe to share
//! read-only across worker threads. No algorithms live in this module.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// One PMU measurement channel. The declaration order (VPM < VPA < IPM <
/// IPA < F) is the canonical order used when concatenating per-channel
/// feature blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelKind {
    Vpm,
    Vpa,
    Ipm,
    Ipa,
    F,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 5] = [
        ChannelKind::Vpm,
        ChannelKind::Vpa,
        ChannelKind::Ipm,
        ChannelKind::Ipa,
        ChannelKind::F,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelKind::Vpm => "VPM",
            ChannelKind::Vpa => "VPA",
            ChannelKind::Ipm => "IPM",
            ChannelKind::Ipa => "IPA",
            ChannelKind::F => "F",
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VPM" => Ok(ChannelKind::Vpm),
            "VPA" => Ok(ChannelKind::Vpa),
            "IPM" => Ok(ChannelKind::Ipm),
            "IPA" => Ok(ChannelKind::Ipa),
            "F" => Ok(ChannelKind::F),
            other => Err(Error::invalid(format!("unknown channel kind: {other}"))),
        }
    }
}

/// Class label coding: 0 = line trip, 1 = generation loss.
pub type Label = u8;

pub const LABEL_LINE_TRIP: Label = 0;
pub const LABEL_GEN_LOSS: Label = 1;

/// Multi-channel, multi-PMU sample matrix for one event window plus label.
///
/// Each channel holds `m` measurement streams of `N` samples; all channels
/// of one event share the same `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub label: Label,
    pub sample_rate_hz: f64,
    pub channels: BTreeMap<ChannelKind, Vec<Vec<f64>>>,
}

impl EventRecord {
    /// Sample period T_s in seconds.
    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    /// Number of samples N, taken from the first channel present.
    pub fn n_samples(&self) -> Option<usize> {
        self.channels
            .values()
            .next()
            .and_then(|streams| streams.first().map(|s| s.len()))
    }
}

/// Checks every `EventRecord` invariant, returning one message per
/// violation. An empty list means the record is well formed.
pub fn validate_event(record: &EventRecord) -> Vec<String> {
    let mut violations = Vec::new();
    if record.event_id.is_empty() {
        violations.push("empty event_id".to_string());
    }
    if record.label > 1 {
        violations.push(format!("label {} outside {{0,1}}", record.label));
    }
    if !(record.sample_rate_hz.is_finite() && record.sample_rate_hz > 0.0) {
        violations.push(format!("sample_rate_hz {} not positive", record.sample_rate_hz));
    }
    if record.channels.is_empty() {
        violations.push("no channels present".to_string());
    }
    let n_ref = record.n_samples().unwrap_or(0);
    if !record.channels.is_empty() && n_ref < 4 {
        violations.push(format!("N = {n_ref} below the minimum of 4"));
    }
    for (kind, streams) in &record.channels {
        if streams.is_empty() {
            violations.push(format!("channel {kind} has no streams"));
            continue;
        }
        for (i, stream) in streams.iter().enumerate() {
            if stream.len() != n_ref {
                violations.push(format!(
                    "channel {kind} length {} \u{2260} {n_ref}",
                    stream.len()
                ));
            }
            for (n, v) in stream.iter().enumerate() {
                if !v.is_finite() {
                    violations.push(format!(
                        "non-finite sample at ({kind}, stream {i}, n={n})"
                    ));
                    break;
                }
            }
        }
    }
    violations
}

/// Polar form of one complex residue R_k^(i).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResiduePolar {
    pub magnitude: f64,
    /// Radians, wrapped to (-pi, pi].
    pub angle: f64,
}

/// One retained mode: damping factor sigma (1/s), angular frequency omega
/// (rad/s, >= 0 by the conjugate-representative convention), and the
/// per-stream residues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub damping_sigma: f64,
    pub angular_freq_omega: f64,
    pub residues: Vec<ResiduePolar>,
}

impl Mode {
    /// A placeholder mode used when padding short decompositions.
    pub fn zero(n_streams: usize) -> Self {
        Mode {
            damping_sigma: 0.0,
            angular_freq_omega: 0.0,
            residues: vec![
                ResiduePolar {
                    magnitude: 0.0,
                    angle: 0.0
                };
                n_streams
            ],
        }
    }

    /// Average residue magnitude across the given streams; skips indices in
    /// `excluded` (degenerate zero-norm streams).
    pub fn avg_residue_magnitude(&self, excluded: &[usize]) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (i, r) in self.residues.iter().enumerate() {
            if excluded.contains(&i) {
                continue;
            }
            sum += r.magnitude;
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// The p-mode fit of one channel group plus its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalDecomposition {
    /// Conjugate-representative modes, sorted descending by average residue
    /// magnitude across streams.
    pub modes: Vec<Mode>,
    pub pencil_order_p: usize,
    pub pencil_l: usize,
    /// Frobenius-relative rank-p approximation error of the stacked Hankel.
    pub rank_error_e_p: f64,
    /// Per-stream relative l2 reconstruction errors E_i.
    pub reconstruction_errors: Vec<f64>,
    /// Streams whose l2 norm fell below the degeneracy floor.
    pub degenerate_streams: Vec<usize>,
    /// Set when the rank-p fit explains little of the data (E_p > 0.5).
    pub low_confidence: bool,
}

impl ModalDecomposition {
    pub fn n_streams(&self) -> usize {
        self.reconstruction_errors.len()
    }
}

/// The d-dimensional ordered real feature vector for one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub event_id: String,
    pub label: Label,
    pub values: Vec<f64>,
    pub names: Vec<String>,
    /// Quality notes (zero-padding events etc.); empty for clean extractions.
    pub flags: Vec<String>,
}

/// A labeled feature matrix with a shared feature-name index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<FeatureVector>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset, enforcing that all rows share one name ordering.
    pub fn from_rows(rows: Vec<FeatureVector>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("dataset needs at least one row"))?;
        let feature_names = first.names.clone();
        {
            let mut seen = std::collections::BTreeSet::new();
            for name in &feature_names {
                if !seen.insert(name) {
                    return Err(Error::invalid(format!("duplicate feature name {name}")));
                }
            }
        }
        for row in &rows {
            if row.names != feature_names {
                return Err(Error::Schema(format!(
                    "row {} has a different feature-name ordering",
                    row.event_id
                )));
            }
            if row.values.len() != feature_names.len() {
                return Err(Error::Schema(format!(
                    "row {} has {} values for {} names",
                    row.event_id,
                    row.values.len(),
                    feature_names.len()
                )));
            }
        }
        Ok(Dataset {
            rows,
            feature_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[j]).collect()
    }

    /// New dataset keeping only the given feature indices, in the given order.
    pub fn project(&self, indices: &[usize]) -> Result<Self> {
        for &j in indices {
            if j >= self.n_features() {
                return Err(Error::invalid(format!(
                    "feature index {j} out of range (d = {})",
                    self.n_features()
                )));
            }
        }
        let feature_names: Vec<String> = indices
            .iter()
            .map(|&j| self.feature_names[j].clone())
            .collect();
        let rows = self
            .rows
            .iter()
            .map(|r| FeatureVector {
                event_id: r.event_id.clone(),
                label: r.label,
                values: indices.iter().map(|&j| r.values[j]).collect(),
                names: feature_names.clone(),
                flags: r.flags.clone(),
            })
            .collect();
        Ok(Dataset {
            rows,
            feature_names,
        })
    }

    /// Subset of rows by index, preserving order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn well_formed() -> EventRecord {
        let mut channels = BTreeMap::new();
        channels.insert(ChannelKind::Vpm, vec![vec![1.0, 2.0, 3.0, 4.0]; 2]);
        channels.insert(ChannelKind::Vpa, vec![vec![0.0, 1.0, 0.0, 1.0]; 2]);
        channels.insert(ChannelKind::F, vec![vec![60.0, 60.1, 60.0, 59.9]; 2]);
        EventRecord {
            event_id: "ev0".into(),
            label: 0,
            sample_rate_hz: 30.0,
            channels,
        }
    }

    #[test]
    fn validate_accepts_well_formed_record() {
        assert!(validate_event(&well_formed()).is_empty());
    }

    #[test]
    fn validate_reports_mismatched_length() {
        let mut rec = well_formed();
        rec.channels.get_mut(&ChannelKind::F).unwrap()[0].pop();
        let v = validate_event(&rec);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("channel F length 3"), "{v:?}");
    }

    #[test]
    fn validate_reports_non_finite_sample() {
        let mut rec = well_formed();
        rec.channels.get_mut(&ChannelKind::Vpm).unwrap()[1][2] = f64::NAN;
        let v = validate_event(&rec);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("(VPM, stream 1, n=2)"), "{v:?}");
    }

    #[test]
    fn channel_order_is_canonical() {
        let mut kinds = ChannelKind::ALL.to_vec();
        kinds.sort();
        assert_eq!(kinds, ChannelKind::ALL.to_vec());
    }

    #[test]
    fn dataset_rejects_ragged_rows() {
        let a = FeatureVector {
            event_id: "a".into(),
            label: 0,
            values: vec![1.0],
            names: vec!["x".into()],
            flags: vec![],
        };
        let b = FeatureVector {
            event_id: "b".into(),
            label: 1,
            values: vec![1.0],
            names: vec!["y".into()],
            flags: vec![],
        };
        assert!(Dataset::from_rows(vec![a, b]).is_err());
    }
}
