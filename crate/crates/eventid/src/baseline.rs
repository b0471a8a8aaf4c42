//! Subspace-angle baseline classifier: each event window is summarized by
//! the dominant right-singular subspace of its (streams x samples) matrix
//! and matched against per-event dictionary entries by the mean principal
//! angle, with a 1-nearest-neighbor decision.

use crate::core::{ChannelKind, EventRecord, Label};
use crate::error::{Error, Result};
use crate::learn::Confusion;
use crate::modal::gram_svd;
use crate::par;
use crate::preprocess::detrend_event;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// How per-pair principal angles collapse into one distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngleAggregate {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Subspace dimension r.
    pub subspace_r: usize,
    /// Channel summarized by the baseline.
    pub channel: ChannelKind,
    pub aggregate: AngleAggregate,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            subspace_r: 5,
            channel: ChannelKind::Vpm,
            aggregate: AngleAggregate::Mean,
        }
    }
}

/// One labeled N x r orthonormal basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub label: Label,
    pub basis: DMatrix<f64>,
    /// Set when the data had rank below r and the basis was truncated.
    pub rank_deficient: bool,
}

/// A labeled collection of event subspaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceDictionary {
    pub entries: Vec<DictionaryEntry>,
    pub r: usize,
    pub window_n: usize,
}

/// Orthonormal basis of the dominant r-dimensional right-singular subspace
/// of the m x N stream matrix (columns indexed by time). Returns fewer than
/// r columns if the data rank is lower.
pub fn event_subspace(streams: &[Vec<f64>], r: usize) -> Result<DictionaryEntry> {
    let first = streams
        .first()
        .ok_or_else(|| Error::invalid("event_subspace: no streams"))?;
    let n = first.len();
    if streams.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("event_subspace: ragged stream lengths"));
    }
    if r < 1 || r > n.min(streams.len()) {
        return Err(Error::invalid(format!(
            "subspace dimension r={r} out of range for {} x {n} data",
            streams.len()
        )));
    }
    let x = DMatrix::from_fn(streams.len(), n, |i, t| streams[i][t]);
    let (svals, v) = gram_svd(&x);
    let rank = svals.iter().take(r).filter(|&&s| s > 0.0).count();
    if rank == 0 {
        return Err(Error::numerical("event_subspace: zero data matrix"));
    }
    Ok(DictionaryEntry {
        label: 0,
        basis: v.columns(0, rank).clone_owned(),
        rank_deficient: rank < r,
    })
}

/// Distance between two column-orthonormal bases: the aggregated principal
/// angles, computed from the singular values of A^T B clamped into [0, 1].
/// Symmetric, zero for identical subspaces, pi/2 for orthogonal ones.
pub fn subspace_distance(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    aggregate: AngleAggregate,
) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::invalid(format!(
            "subspace ambient dimensions differ: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let m = a.transpose() * b;
    let (cosines, _) = gram_svd(&m);
    let k = a.ncols().min(b.ncols());
    let angles: Vec<f64> = cosines
        .iter()
        .take(k)
        .map(|&c| c.clamp(0.0, 1.0).acos())
        .collect();
    if angles.is_empty() {
        return Err(Error::invalid("subspace_distance: empty basis"));
    }
    Ok(match aggregate {
        AngleAggregate::Mean => angles.iter().sum::<f64>() / angles.len() as f64,
        AngleAggregate::Max => angles.iter().fold(0.0f64, |m, &a| m.max(a)),
    })
}

impl SubspaceDictionary {
    /// Builds one dictionary entry per training event from the configured
    /// channel of the detrended window.
    pub fn build(events: &[EventRecord], cfg: &BaselineConfig) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::invalid("subspace dictionary needs training events"));
        }
        let window_n = events[0]
            .n_samples()
            .ok_or_else(|| Error::invalid("event has no samples"))?;
        let entries: Vec<Result<DictionaryEntry>> = par::map_slice(events, |event| {
            let detrended = detrend_event(event)?;
            let streams = detrended.channels.get(&cfg.channel).ok_or_else(|| {
                Error::invalid(format!(
                    "event {} lacks channel {}",
                    event.event_id, cfg.channel
                ))
            })?;
            let mut entry = event_subspace(streams, cfg.subspace_r)?;
            entry.label = event.label;
            Ok(entry)
        });
        let entries: Vec<DictionaryEntry> = entries.into_iter().collect::<Result<_>>()?;
        Ok(SubspaceDictionary {
            entries,
            r: cfg.subspace_r,
            window_n,
        })
    }

    /// 1-nearest-neighbor label by subspace distance; ties keep the earliest
    /// entry. Also returns the winning distance.
    pub fn classify(
        &self,
        event: &EventRecord,
        cfg: &BaselineConfig,
    ) -> Result<(Label, f64)> {
        let detrended = detrend_event(event)?;
        let streams = detrended.channels.get(&cfg.channel).ok_or_else(|| {
            Error::invalid(format!(
                "event {} lacks channel {}",
                event.event_id, cfg.channel
            ))
        })?;
        let probe = event_subspace(streams, cfg.subspace_r)?;
        let mut best: Option<(Label, f64)> = None;
        for entry in &self.entries {
            let d = subspace_distance(&probe.basis, &entry.basis, cfg.aggregate)?;
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((entry.label, d));
            }
        }
        best.ok_or_else(|| Error::invalid("empty subspace dictionary"))
    }
}

/// Stratified k-fold evaluation of the baseline: per fold, the dictionary
/// is built from the training events and the held-out events classified;
/// out-of-fold predictions pool into one confusion matrix.
pub fn baseline_kfold_confusion(
    events: &[EventRecord],
    cfg: &BaselineConfig,
    folds: usize,
    seed: u64,
) -> Result<Confusion> {
    use rand::SeedableRng;
    if folds < 2 || folds > events.len() {
        return Err(Error::config(format!("fold count {folds} out of range")));
    }
    let labels: Vec<Label> = events.iter().map(|e| e.label).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let assignment = crate::stats::stratified_folds(&labels, folds, &mut rng)?;
    let mut actual = Vec::with_capacity(events.len());
    let mut predicted = Vec::with_capacity(events.len());
    for fold in 0..folds {
        let train: Vec<EventRecord> = events
            .iter()
            .zip(assignment.iter())
            .filter(|(_, &a)| a != fold)
            .map(|(e, _)| e.clone())
            .collect();
        let test: Vec<&EventRecord> = events
            .iter()
            .zip(assignment.iter())
            .filter(|(_, &a)| a == fold)
            .map(|(e, _)| e)
            .collect();
        if test.is_empty() {
            continue;
        }
        let dictionary = SubspaceDictionary::build(&train, cfg)?;
        let fold_preds: Vec<Result<(Label, f64)>> =
            par::map_slice(&test, |event| dictionary.classify(event, cfg));
        for (event, pred) in test.iter().zip(fold_preds.into_iter()) {
            actual.push(event.label);
            predicted.push(pred?.0);
        }
    }
    Confusion::from_pairs(&actual, &predicted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn orthonormal_pair(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        // Disjoint coordinate subspaces are exactly orthogonal.
        let a = DMatrix::from_fn(n, 2, |r, c| f64::from(r == c));
        let b = DMatrix::from_fn(n, 2, |r, c| f64::from(r == c + 2));
        (a, b)
    }

    #[test]
    fn distance_to_self_is_zero() {
        let (a, _) = orthonormal_pair(6);
        let d = subspace_distance(&a, &a, AngleAggregate::Mean).unwrap();
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn distance_between_orthogonal_subspaces_is_right_angle() {
        let (a, b) = orthonormal_pair(6);
        for aggregate in [AngleAggregate::Mean, AngleAggregate::Max] {
            let d = subspace_distance(&a, &b, aggregate).unwrap();
            assert_abs_diff_eq!(d, FRAC_PI_2, epsilon = 1e-12);
        }
    }

    // Oracle: plant a single known principal angle. Rotating e0 by theta
    // inside the (e0, e2) plane gives exactly one angle theta against e0.
    #[test]
    fn distance_recovers_planted_angle() {
        let theta = PI / 6.0;
        let a = DMatrix::from_fn(5, 1, |r, _| f64::from(r == 0));
        let b = DMatrix::from_fn(5, 1, |r, _| match r {
            0 => theta.cos(),
            2 => theta.sin(),
            _ => 0.0,
        });
        let d = subspace_distance(&a, &b, AngleAggregate::Mean).unwrap();
        assert_abs_diff_eq!(d, theta, epsilon = 1e-12);
    }

    #[test]
    fn distance_is_symmetric() {
        let a = DMatrix::from_fn(6, 2, |r, c| ((r + 1) * (c + 2)) as f64)
            .qr()
            .q()
            .columns(0, 2)
            .clone_owned();
        let b = DMatrix::from_fn(6, 2, |r, c| (r * r) as f64 - c as f64 * 1.5)
            .qr()
            .q()
            .columns(0, 2)
            .clone_owned();
        let ab = subspace_distance(&a, &b, AngleAggregate::Mean).unwrap();
        let ba = subspace_distance(&b, &a, AngleAggregate::Mean).unwrap();
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
    }

    #[test]
    fn distance_invariant_under_basis_rotation() {
        let (a, _) = orthonormal_pair(6);
        // Rotate the basis columns inside their own span.
        let phi = 0.7f64;
        let rot = DMatrix::from_row_slice(
            2,
            2,
            &[phi.cos(), -phi.sin(), phi.sin(), phi.cos()],
        );
        let a_rot = &a * rot;
        let b = DMatrix::from_fn(6, 2, |r, c| ((r + c * 3) as f64).sin())
            .qr()
            .q()
            .columns(0, 2)
            .clone_owned();
        let d1 = subspace_distance(&a, &b, AngleAggregate::Mean).unwrap();
        let d2 = subspace_distance(&a_rot, &b, AngleAggregate::Mean).unwrap();
        assert_abs_diff_eq!(d1, d2, epsilon = 1e-10);
    }

    #[test]
    fn event_subspace_spans_planted_directions() {
        // Streams are combinations of two fixed time courses, so the
        // right-singular subspace is exactly their span.
        let n = 40;
        let t1: Vec<f64> = (0..n).map(|t| (0.3 * t as f64).sin()).collect();
        let t2: Vec<f64> = (0..n).map(|t| (0.11 * t as f64).cos()).collect();
        let streams: Vec<Vec<f64>> = (0..4)
            .map(|i| {
                (0..n)
                    .map(|t| (1.0 + i as f64) * t1[t] + (2.0 - i as f64) * t2[t])
                    .collect()
            })
            .collect();
        let entry = event_subspace(&streams, 2).unwrap();
        assert!(!entry.rank_deficient);
        // Both time courses must lie in the span: projecting them onto the
        // basis loses nothing.
        for tc in [&t1, &t2] {
            let v = DMatrix::from_fn(n, 1, |r, _| tc[r]);
            let proj = &entry.basis * (entry.basis.transpose() * &v);
            assert!((&proj - &v).norm() <= 1e-9 * v.norm());
        }
    }

    #[test]
    fn event_subspace_flags_rank_deficiency() {
        let streams = vec![vec![1.0, 2.0, 3.0, 4.0]; 3]; // rank 1
        let entry = event_subspace(&streams, 2).unwrap();
        assert!(entry.rank_deficient);
        assert_eq!(entry.basis.ncols(), 1);
    }

    fn synthetic_event(id: &str, label: Label, omega: f64) -> EventRecord {
        let n = 60;
        let ts = 1.0 / 30.0;
        let streams: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                (0..n)
                    .map(|t| {
                        let time = t as f64 * ts;
                        (1.0 + i as f64 * 0.3) * (omega * time).sin()
                            + 0.2 * ((omega * 2.1) * time + i as f64).cos()
                    })
                    .collect()
            })
            .collect();
        let mut channels = BTreeMap::new();
        channels.insert(ChannelKind::Vpm, streams);
        EventRecord {
            event_id: id.into(),
            label,
            sample_rate_hz: 30.0,
            channels,
        }
    }

    #[test]
    fn dictionary_classifies_distinct_frequency_classes() {
        let mut events = Vec::new();
        for k in 0..6 {
            events.push(synthetic_event(&format!("a{k}"), 0, 4.0 + k as f64 * 0.05));
            events.push(synthetic_event(&format!("b{k}"), 1, 9.0 + k as f64 * 0.05));
        }
        let cfg = BaselineConfig {
            subspace_r: 2,
            ..BaselineConfig::default()
        };
        let dictionary = SubspaceDictionary::build(&events, &cfg).unwrap();
        let probe0 = synthetic_event("p0", 0, 4.12);
        let probe1 = synthetic_event("p1", 1, 9.12);
        assert_eq!(dictionary.classify(&probe0, &cfg).unwrap().0, 0);
        assert_eq!(dictionary.classify(&probe1, &cfg).unwrap().0, 1);
    }

    #[test]
    fn baseline_kfold_on_separable_classes() {
        let mut events = Vec::new();
        for k in 0..10 {
            events.push(synthetic_event(&format!("a{k}"), 0, 4.0 + k as f64 * 0.03));
            events.push(synthetic_event(&format!("b{k}"), 1, 9.0 + k as f64 * 0.03));
        }
        let cfg = BaselineConfig {
            subspace_r: 2,
            ..BaselineConfig::default()
        };
        let confusion = baseline_kfold_confusion(&events, &cfg, 5, 1).unwrap();
        let total: usize = confusion.counts.iter().flatten().sum();
        assert_eq!(total, events.len());
        assert!(confusion.accuracy() > 0.9, "accuracy {}", confusion.accuracy());
    }

    #[test]
    fn missing_channel_is_rejected() {
        let event = synthetic_event("x", 0, 4.0);
        let cfg = BaselineConfig {
            channel: ChannelKind::Ipm,
            subspace_r: 2,
            ..BaselineConfig::default()
        };
        assert!(SubspaceDictionary::build(&[event], &cfg).is_err());
    }
}
