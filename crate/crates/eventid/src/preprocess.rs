//! Linear detrending of measurement streams.
//!
//! Every stream is detrended independently by removing its least-squares
//! line over the sample index before any modal analysis.

use crate::core::EventRecord;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Coefficients of the removed line `w0 + w1 * n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetrendFit {
    pub intercept_w0: f64,
    pub slope_w1: f64,
}

/// Removes the least-squares linear fit over the sample index n = 0..N-1.
/// The 2x2 normal equations are solved in closed form.
pub fn detrend_stream(samples: &[f64]) -> Result<(Vec<f64>, DetrendFit)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "detrend needs at least 2 samples, got {n}"
        )));
    }
    if let Some(bad) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite sample at n={bad}")));
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = samples.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &y) in samples.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    let w1 = sxy / sxx;
    let w0 = mean_y - w1 * mean_x;
    let detrended = samples
        .iter()
        .enumerate()
        .map(|(i, &y)| y - (w0 + w1 * i as f64))
        .collect();
    Ok((
        detrended,
        DetrendFit {
            intercept_w0: w0,
            slope_w1: w1,
        },
    ))
}

/// Detrends every stream of every channel; label and metadata are kept.
pub fn detrend_event(record: &EventRecord) -> Result<EventRecord> {
    let mut out = record.clone();
    for streams in out.channels.values_mut() {
        for stream in streams.iter_mut() {
            let (d, _) = detrend_stream(stream)?;
            *stream = d;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::ChannelKind;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    #[test]
    fn constant_vector_detrends_to_zero() {
        let (d, fit) = detrend_stream(&[5.0, 5.0, 5.0, 5.0]).unwrap();
        assert!(d.iter().all(|&v| v.abs() < 1e-12));
        assert_abs_diff_eq!(fit.intercept_w0, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.slope_w1, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ramp_detrends_to_zero() {
        let (d, fit) = detrend_stream(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(d.iter().all(|&v| v.abs() < 1e-12));
        assert_abs_diff_eq!(fit.intercept_w0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.slope_w1, 1.0, epsilon = 1e-12);
    }

    // Oracle: normal equations by hand for y = [0,1,0,1], n = 0..3.
    // mean_n = 1.5, mean_y = 0.5, Sxy = 1, Sxx = 5 => w1 = 0.2, w0 = 0.2.
    // Residuals: [-0.2, 0.6, -0.6, 0.2].
    #[test]
    fn alternating_vector_matches_normal_equations() {
        let (d, fit) = detrend_stream(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(fit.intercept_w0, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.slope_w1, 0.2, epsilon = 1e-12);
        let expected = [-0.2, 0.6, -0.6, 0.2];
        for (got, want) in d.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn residuals_have_zero_mean_and_zero_covariance_with_index() {
        let samples: Vec<f64> = (0..50)
            .map(|i| 3.0 + 0.25 * i as f64 + (i as f64 * 0.7).sin())
            .collect();
        let (d, _) = detrend_stream(&samples).unwrap();
        let scale = samples.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mean: f64 = d.iter().sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 1e-9 * scale);
        let mean_x = (d.len() as f64 - 1.0) / 2.0;
        let cov: f64 = d
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 - mean_x) * v)
            .sum();
        assert!(cov.abs() < 1e-9 * scale * d.len() as f64);
    }

    #[test]
    fn too_short_input_is_rejected() {
        assert!(detrend_stream(&[7.0]).is_err());
    }

    #[test]
    fn detrend_event_applies_per_stream() {
        let mut channels = BTreeMap::new();
        channels.insert(
            ChannelKind::Vpm,
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 2.0, 2.0, 2.0]],
        );
        let rec = EventRecord {
            event_id: "e".into(),
            label: 1,
            sample_rate_hz: 30.0,
            channels,
        };
        let out = detrend_event(&rec).unwrap();
        assert_eq!(out.label, 1);
        assert_eq!(out.event_id, "e");
        for stream in &out.channels[&ChannelKind::Vpm] {
            assert!(stream.iter().all(|&v| v.abs() < 1e-12));
        }
    }

    proptest! {
        // Adding any affine function of n leaves the detrended output unchanged.
        #[test]
        fn affine_invariance(
            base in proptest::collection::vec(-100.0f64..100.0, 8..40),
            a in -50.0f64..50.0,
            b in -5.0f64..5.0,
        ) {
            let shifted: Vec<f64> = base
                .iter()
                .enumerate()
                .map(|(i, &v)| v + a + b * i as f64)
                .collect();
            let (d0, _) = detrend_stream(&base).unwrap();
            let (d1, _) = detrend_stream(&shifted).unwrap();
            let norm: f64 = d0.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            for (x, y) in d0.iter().zip(d1.iter()) {
                prop_assert!((x - y).abs() <= 1e-9 * norm);
            }
        }

        // Idempotence: detrending twice changes nothing.
        #[test]
        fn idempotence(base in proptest::collection::vec(-100.0f64..100.0, 4..40)) {
            let (d1, _) = detrend_stream(&base).unwrap();
            let (d2, _) = detrend_stream(&d1).unwrap();
            let norm: f64 = d1.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            for (x, y) in d1.iter().zip(d2.iter()) {
                prop_assert!((x - y).abs() <= 1e-9 * norm);
            }
        }
    }
}
