//! Per-event feature vector assembly from per-channel modal decompositions.
//!
//! Each channel contributes `2 (p' + m' p')` features laid out as
//! `[omega_1..omega_p', sigma_1..sigma_p', residue magnitudes (m' per mode,
//! descending), residue angles (same PMU order)]`; channels concatenate in
//! canonical order for a total of `d = 2 n_ch (p' + m' p')`.

use crate::core::{ChannelKind, EventRecord, FeatureVector, ModalDecomposition, Mode};
use crate::error::{Error, Result};
use crate::modal::mode_order;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Distinct modes kept per channel (p').
    pub p_prime: usize,
    /// Residue-bearing streams kept per mode (m').
    pub m_prime: usize,
    /// Channels to include, canonical order enforced at construction.
    pub channels: Vec<ChannelKind>,
}

impl FeatureConfig {
    pub fn new(p_prime: usize, m_prime: usize, mut channels: Vec<ChannelKind>) -> Result<Self> {
        if p_prime < 1 || m_prime < 1 {
            return Err(Error::invalid("p' and m' must both be at least 1"));
        }
        if channels.is_empty() {
            return Err(Error::invalid("feature config needs at least one channel"));
        }
        channels.sort();
        channels.dedup();
        Ok(FeatureConfig {
            p_prime,
            m_prime,
            channels,
        })
    }

    /// Feature count per channel: 2 (p' + m' p').
    pub fn features_per_channel(&self) -> usize {
        2 * (self.p_prime + self.m_prime * self.p_prime)
    }

    /// Total dimension d = 2 n_ch (p' + m' p').
    pub fn total_features(&self) -> usize {
        self.channels.len() * self.features_per_channel()
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            p_prime: 3,
            m_prime: 20,
            channels: vec![ChannelKind::Vpm, ChannelKind::Vpa, ChannelKind::F],
        }
    }
}

/// True when two modes describe the same (sigma, omega) point within the
/// conjugate-dedup tolerance.
fn modes_coincide(a: &Mode, b: &Mode) -> bool {
    let scale = (a.damping_sigma.hypot(a.angular_freq_omega)).max(1.0);
    (a.damping_sigma - b.damping_sigma).abs() <= 1e-6 * scale
        && (a.angular_freq_omega - b.angular_freq_omega).abs() <= 1e-6 * scale
}

/// Collapses duplicated conjugate representatives, ranks survivors by
/// average residue magnitude (ties: larger omega, then larger sigma), and
/// returns exactly `p_prime` modes, zero-padding when too few survive.
/// The boolean is true when padding was needed.
pub fn dedup_and_rank_modes(
    dec: &ModalDecomposition,
    p_prime: usize,
) -> (Vec<Mode>, bool) {
    let mut survivors: Vec<Mode> = Vec::new();
    for mode in &dec.modes {
        if !survivors.iter().any(|kept| modes_coincide(kept, mode)) {
            survivors.push(mode.clone());
        }
    }
    survivors.sort_by(|a, b| mode_order(a, b, &dec.degenerate_streams));
    let padded = survivors.len() < p_prime;
    let n_streams = dec.n_streams();
    while survivors.len() < p_prime {
        survivors.push(Mode::zero(n_streams));
    }
    survivors.truncate(p_prime);
    (survivors, padded)
}

/// Feature block of one channel: values, names (prefixed with the channel
/// tag), and a flag when zero-padding was required.
pub fn channel_features(
    dec: &ModalDecomposition,
    kind: ChannelKind,
    cfg: &FeatureConfig,
) -> (Vec<f64>, Vec<String>, Vec<String>) {
    let (modes, mode_padded) = dedup_and_rank_modes(dec, cfg.p_prime);
    let mut values = Vec::with_capacity(cfg.features_per_channel());
    let mut names = Vec::with_capacity(cfg.features_per_channel());
    let mut flags = Vec::new();
    if mode_padded {
        flags.push(format!("{kind}: fewer than p'={} modes, zero-padded", cfg.p_prime));
    }
    for (k, mode) in modes.iter().enumerate() {
        values.push(mode.angular_freq_omega);
        names.push(format!("{kind}.mode{}.omega", k + 1));
    }
    for (k, mode) in modes.iter().enumerate() {
        values.push(mode.damping_sigma);
        names.push(format!("{kind}.mode{}.sigma", k + 1));
    }
    // Per mode: the m' largest residue magnitudes descending, excluding
    // degenerate streams, then the matching angles in the same PMU order.
    let mut per_mode: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(modes.len());
    for mode in &modes {
        let mut residues: Vec<_> = mode
            .residues
            .iter()
            .enumerate()
            .filter(|(i, _)| !dec.degenerate_streams.contains(i))
            .map(|(_, r)| (r.magnitude, r.angle))
            .collect();
        residues.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        });
        if residues.len() < cfg.m_prime {
            flags.push(format!(
                "{kind}: only {} usable streams for m'={}, zero-padded",
                residues.len(),
                cfg.m_prime
            ));
            residues.resize(cfg.m_prime, (0.0, 0.0));
        }
        residues.truncate(cfg.m_prime);
        let (mags, angles): (Vec<f64>, Vec<f64>) = residues.into_iter().unzip();
        per_mode.push((mags, angles));
    }
    for (k, (mags, _)) in per_mode.iter().enumerate() {
        for (i, &mag) in mags.iter().enumerate() {
            values.push(mag);
            names.push(format!("{kind}.mode{}.res_mag_{}", k + 1, i + 1));
        }
    }
    for (k, (_, angles)) in per_mode.iter().enumerate() {
        for (i, &ang) in angles.iter().enumerate() {
            values.push(ang);
            names.push(format!("{kind}.mode{}.res_ang_{}", k + 1, i + 1));
        }
    }
    (values, names, flags)
}

/// Concatenates per-channel blocks in canonical order into the event's
/// feature vector of dimension d = 2 n_ch (p' + m' p').
pub fn build_feature_vector(
    event: &EventRecord,
    decs: &BTreeMap<ChannelKind, ModalDecomposition>,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(cfg.total_features());
    let mut names = Vec::with_capacity(cfg.total_features());
    let mut flags = Vec::new();
    for &kind in &cfg.channels {
        let dec = decs.get(&kind).ok_or_else(|| {
            Error::invalid(format!(
                "missing decomposition for channel {kind} on event {}",
                event.event_id
            ))
        })?;
        let (v, n, f) = channel_features(dec, kind, cfg);
        values.extend(v);
        names.extend(n);
        flags.extend(f);
    }
    debug_assert_eq!(values.len(), cfg.total_features());
    Ok(FeatureVector {
        event_id: event.event_id.clone(),
        label: event.label,
        values,
        names,
        flags,
    })
}
