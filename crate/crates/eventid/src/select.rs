//! Feature normalization and bootstrapped filter-method selection.
//!
//! Three dependence measures score each feature against the binary label:
//! one-way ANOVA F-value (F), sure independence screening (S, absolute
//! Pearson correlation), and a nearest-neighbor mutual-information
//! estimator (M). Scores are bootstrapped and features ranked by the 95th
//! percentile of their score distribution.

use crate::core::{Dataset, Label};
use crate::error::{Error, Result};
use crate::par;
use crate::stats::{mean, percentile, population_variance, resample_both_classes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;
use std::str::FromStr;

/// Cap reported for an unbounded F statistic (zero within-class variance).
pub const F_VALUE_CAP: f64 = 1e12;
/// Features with standard deviation below this are treated as constant.
const CONSTANT_STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    /// One-way ANOVA F-value test.
    F,
    /// Sure independence screening (|Pearson r| against the label).
    S,
    /// Nearest-neighbor mutual information.
    M,
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F" => Ok(Measure::F),
            "S" => Ok(Measure::S),
            "M" => Ok(Measure::M),
            other => Err(Error::config(format!(
                "unknown measure {other} (expected F, S, or M)"
            ))),
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Measure::F => "F",
            Measure::S => "S",
            Measure::M => "M",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub measure: Measure,
    pub d_prime: usize,
    pub bootstraps_b_s: usize,
    pub percentile: f64,
    /// Neighbor count for the MI estimator.
    pub knn_k: usize,
    pub rng_seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            measure: Measure::M,
            d_prime: 10,
            bootstraps_b_s: 200,
            percentile: 95.0,
            knn_k: 3,
            rng_seed: 0,
        }
    }
}

impl SelectionConfig {
    fn validate(&self, d: usize) -> Result<()> {
        if self.d_prime < 1 || self.d_prime > d {
            return Err(Error::config(format!(
                "d' = {} out of range 1..={d}",
                self.d_prime
            )));
        }
        if self.bootstraps_b_s < 1 {
            return Err(Error::config("bootstraps must be at least 1"));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::config(format!(
                "percentile {} out of (0, 100]",
                self.percentile
            )));
        }
        if self.knn_k < 1 {
            return Err(Error::config("knn_k must be at least 1"));
        }
        Ok(())
    }
}

/// Per-feature Z-score statistics fitted on training data. Constant
/// features keep std 1 and are flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.n_rows() < 2 {
            return Err(Error::invalid("z-score fit needs at least 2 rows"));
        }
        let d = train.n_features();
        let mut means = Vec::with_capacity(d);
        let mut stds = Vec::with_capacity(d);
        let mut constant = Vec::with_capacity(d);
        for j in 0..d {
            let col = train.column(j);
            let m = mean(&col);
            let s = population_variance(&col).sqrt();
            means.push(m);
            if s < CONSTANT_STD_FLOOR {
                stds.push(1.0);
                constant.push(true);
            } else {
                stds.push(s);
                constant.push(false);
            }
        }
        Ok(NormStats {
            mean: means,
            std: stds,
            constant,
        })
    }

    /// Applies the fitted transform to any dataset with the same schema.
    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.n_features() != self.mean.len() {
            return Err(Error::Schema(format!(
                "norm stats fitted on {} features, dataset has {}",
                self.mean.len(),
                data.n_features()
            )));
        }
        let mut out = data.clone();
        for row in out.rows.iter_mut() {
            for (j, v) in row.values.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// Fits Z-score statistics on `train` and returns the normalized dataset
/// together with the statistics (population standard deviation).
pub fn zscore_fit_transform(train: &Dataset) -> Result<(Dataset, NormStats)> {
    let stats = NormStats::fit(train)?;
    let normalized = stats.transform(train)?;
    Ok((normalized, stats))
}

fn split_classes(feature: &[f64], labels: &[Label]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g0 = Vec::new();
    let mut g1 = Vec::new();
    for (&x, &y) in feature.iter().zip(labels.iter()) {
        if y == 0 {
            g0.push(x);
        } else {
            g1.push(x);
        }
    }
    if g0.is_empty() || g1.is_empty() {
        return Err(Error::invalid("both classes must be present"));
    }
    Ok((g0, g1))
}

/// One-way ANOVA F statistic over the two label groups. An unbounded
/// statistic (zero within-group variance, distinct means) is capped at
/// [`F_VALUE_CAP`].
pub fn f_value(feature: &[f64], labels: &[Label]) -> Result<f64> {
    let (g0, g1) = split_classes(feature, labels)?;
    let n = feature.len() as f64;
    let grand = mean(feature);
    let (m0, m1) = (mean(&g0), mean(&g1));
    let ss_between = g0.len() as f64 * (m0 - grand).powi(2) + g1.len() as f64 * (m1 - grand).powi(2);
    let ss_within: f64 = g0.iter().map(|x| (x - m0).powi(2)).sum::<f64>()
        + g1.iter().map(|x| (x - m1).powi(2)).sum::<f64>();
    let df_between = 1.0;
    let df_within = n - 2.0;
    if df_within <= 0.0 {
        return Err(Error::invalid("F-value needs at least 3 samples"));
    }
    let ms_between = ss_between / df_between;
    let ms_within = ss_within / df_within;
    if ms_within <= 0.0 {
        return Ok(if ms_between > 0.0 { F_VALUE_CAP } else { 0.0 });
    }
    Ok((ms_between / ms_within).min(F_VALUE_CAP))
}

/// Sure independence screening score: |Pearson correlation| between the
/// feature and the 0/1 label vector. Constant inputs score 0.
pub fn sis_score(feature: &[f64], labels: &[Label]) -> Result<f64> {
    split_classes(feature, labels)?;
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mx = mean(feature);
    let my = mean(&y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xv, &yv) in feature.iter().zip(y.iter()) {
        sxy += (xv - mx) * (yv - my);
        sxx += (xv - mx) * (xv - mx);
        syy += (yv - my) * (yv - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).abs())
}

/// Nearest-neighbor mutual information (nats) between a continuous feature
/// and the discrete label: for each sample, d_i is the distance to its k-th
/// neighbor within its own class and m_i counts all samples strictly inside
/// that radius (self included);
/// MI = psi(N) - <psi(N_c)> + psi(k) - <psi(m_i)>, clamped at 0.
///
/// Ties are broken by a deterministic jitter of 1e-10 * feature std keyed
/// to `seed`, so duplicated columns score identically and affine rescaling
/// changes the estimate only at the jitter level.
pub fn mutual_information(feature: &[f64], labels: &[Label], k: usize, seed: u64) -> Result<f64> {
    let n = feature.len();
    if n != labels.len() {
        return Err(Error::invalid("feature/label length mismatch"));
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = n - n1;
    if n0 <= k || n1 <= k {
        return Err(Error::invalid(format!(
            "each class needs more than k={k} members (got {n0} / {n1})"
        )));
    }
    let scale = population_variance(feature).sqrt();
    let jitter_scale = 1e-10 * if scale > 0.0 { scale } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = feature
        .iter()
        .map(|&v| v + jitter_scale * rng.gen::<f64>())
        .collect();

    let mut global: Vec<f64> = x.clone();
    global.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Per-class sorted positions.
    let mut class_sorted: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (&v, &l) in x.iter().zip(labels.iter()) {
        class_sorted[l as usize].push(v);
    }
    class_sorted[0].sort_by(|a, b| a.partial_cmp(b).unwrap());
    class_sorted[1].sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut sum_psi_m = 0.0;
    let mut sum_psi_nc = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let class = labels[i] as usize;
        let own = &class_sorted[class];
        // Position of xi in its class (values are distinct after jitter).
        let pos = own.partition_point(|&v| v < xi);
        // k-th nearest neighbor within the class via two-pointer expansion.
        let mut lo = pos; // next candidate below is own[lo-1]
        let mut hi = pos + 1; // next candidate above is own[hi]
        let mut d_k = 0.0;
        for _ in 0..k {
            let below = if lo > 0 {
                xi - own[lo - 1]
            } else {
                f64::INFINITY
            };
            let above = if hi < own.len() {
                own[hi] - xi
            } else {
                f64::INFINITY
            };
            if below <= above {
                d_k = below;
                lo -= 1;
            } else {
                d_k = above;
                hi += 1;
            }
        }
        // Count of all samples strictly within d_k of xi (self included).
        let upper = global.partition_point(|&v| v < xi + d_k);
        let lower = global.partition_point(|&v| v <= xi - d_k);
        let m_i = upper - lower;
        sum_psi_m += digamma(m_i as f64);
        sum_psi_nc += digamma(own.len() as f64);
    }
    let nf = n as f64;
    let mi = digamma(nf) - sum_psi_nc / nf + digamma(k as f64) - sum_psi_m / nf;
    Ok(mi.max(0.0))
}

fn score_feature(
    measure: Measure,
    feature: &[f64],
    labels: &[Label],
    k: usize,
    seed: u64,
) -> Result<f64> {
    match measure {
        Measure::F => f_value(feature, labels),
        Measure::S => sis_score(feature, labels),
        Measure::M => mutual_information(feature, labels, k, seed),
    }
}

/// Result of [`bootstrap_select`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    /// The top d' feature indices, sorted by descending percentile score
    /// (ties broken by lower index).
    pub selected_indices: Vec<usize>,
    /// Per-feature percentile of the bootstrapped score distribution.
    pub percentiles: Vec<f64>,
    /// Per-feature mean bootstrap score.
    pub mean_scores: Vec<f64>,
    /// Scores indexed `[feature][bootstrap]`.
    pub score_table: Vec<Vec<f64>>,
}

/// Draws B_s bootstrap resamples of the (normalized) training set, scores
/// every feature on each resample, and keeps the d' features with the
/// highest score percentiles.
pub fn bootstrap_select(train: &Dataset, cfg: &SelectionConfig) -> Result<SelectionOutcome> {
    let d = train.n_features();
    cfg.validate(d)?;
    let labels = train.labels();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::invalid("training data must contain both classes"));
    }
    let min_per_class = if cfg.measure == Measure::M {
        cfg.knn_k + 1
    } else {
        1
    };
    let columns: Vec<Vec<f64>> = (0..d).map(|j| train.column(j)).collect();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let iter_seeds: Vec<u64> = (0..cfg.bootstraps_b_s).map(|_| master.gen()).collect();

    let per_bootstrap: Vec<Result<Vec<f64>>> = par::map_slice(&iter_seeds, |&seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = resample_both_classes(&labels, min_per_class, &mut rng)?;
        let drawn_labels: Vec<Label> = draw.iter().map(|&i| labels[i]).collect();
        columns
            .iter()
            .map(|col| {
                let drawn: Vec<f64> = draw.iter().map(|&i| col[i]).collect();
                score_feature(cfg.measure, &drawn, &drawn_labels, cfg.knn_k, seed)
            })
            .collect()
    });

    let mut score_table = vec![vec![0.0; cfg.bootstraps_b_s]; d];
    for (b, res) in per_bootstrap.into_iter().enumerate() {
        let scores = res?;
        for (j, s) in scores.into_iter().enumerate() {
            score_table[j][b] = s;
        }
    }

    let mut percentiles = Vec::with_capacity(d);
    let mut mean_scores = Vec::with_capacity(d);
    for scores in &score_table {
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        percentiles.push(percentile(&sorted, cfg.percentile));
        mean_scores.push(mean(scores));
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        percentiles[b]
            .partial_cmp(&percentiles[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let selected_indices = order[..cfg.d_prime].to_vec();
    Ok(SelectionOutcome {
        selected_indices,
        percentiles,
        mean_scores,
        score_table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::FeatureVector;
    use approx::assert_abs_diff_eq;

    fn dataset(columns: &[Vec<f64>], labels: &[Label]) -> Dataset {
        let names: Vec<String> = (0..columns.len()).map(|j| format!("f{j}")).collect();
        let rows = (0..labels.len())
            .map(|i| FeatureVector {
                event_id: format!("e{i}"),
                label: labels[i],
                values: columns.iter().map(|c| c[i]).collect(),
                names: names.clone(),
                flags: vec![],
            })
            .collect();
        Dataset::from_rows(rows).unwrap()
    }

    // Oracle: mean 2, population std sqrt(2/3).
    #[test]
    fn zscore_matches_hand_computation() {
        let ds = dataset(&[vec![1.0, 2.0, 3.0]], &[0, 1, 0]);
        let (norm, stats) = zscore_fit_transform(&ds).unwrap();
        let col = norm.column(0);
        assert_abs_diff_eq!(col[0], -1.224744871391589, epsilon = 1e-12);
        assert_abs_diff_eq!(col[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(col[2], 1.224744871391589, epsilon = 1e-12);
        assert!(!stats.constant[0]);
    }

    #[test]
    fn zscore_flags_constant_columns() {
        let ds = dataset(&[vec![4.0, 4.0, 4.0]], &[0, 1, 0]);
        let (norm, stats) = zscore_fit_transform(&ds).unwrap();
        assert!(stats.constant[0]);
        assert!(norm.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_is_idempotent_on_standardized_data() {
        let ds = dataset(
            &[vec![-1.224744871391589, 0.0, 1.224744871391589]],
            &[0, 1, 0],
        );
        let (norm, _) = zscore_fit_transform(&ds).unwrap();
        for (a, b) in norm.column(0).iter().zip(ds.column(0).iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn zscore_rejects_single_row() {
        let ds = dataset(&[vec![1.0]], &[0]);
        assert!(zscore_fit_transform(&ds).is_err());
    }

    // Oracle: textbook ANOVA by hand. Groups {1,2} and {3,4}:
    // SSB = 4, df1 = 1, SSW = 1, df2 = 2 => F = 4 / 0.5 = 8.
    #[test]
    fn f_value_matches_textbook_example() {
        let f = f_value(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(f, 8.0, epsilon = 1e-9);
    }

    #[test]
    fn f_value_zero_when_group_means_equal_grand_mean() {
        let f = f_value(&[1.0, 3.0, 1.0, 3.0], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(f, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn f_value_caps_degenerate_within_variance() {
        let f = f_value(&[0.0, 0.0, 1.0, 1.0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(f, F_VALUE_CAP);
    }

    #[test]
    fn f_value_rejects_single_class() {
        assert!(f_value(&[1.0, 2.0], &[0, 0]).is_err());
    }

    #[test]
    fn sis_score_of_label_itself_is_one() {
        let s = sis_score(&[0.0, 0.0, 1.0, 1.0], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sis_score_of_orthogonal_feature_is_zero() {
        // Feature orthogonal to the centered label by construction.
        let s = sis_score(&[1.0, -1.0, 1.0, -1.0], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
    }

    // Oracle: hand Pearson computation, r = 2 / sqrt(5) = 0.894427...
    #[test]
    fn sis_score_matches_hand_computation() {
        let s = sis_score(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(s, 0.8944271909999159, epsilon = 1e-12);
    }

    #[test]
    fn sis_score_constant_feature_is_zero() {
        let s = sis_score(&[2.0, 2.0, 2.0, 2.0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(s, 0.0);
    }

    fn interleaved_labels(n: usize) -> Vec<Label> {
        (0..n).map(|i| (i % 2) as Label).collect()
    }

    #[test]
    fn mi_near_zero_for_independent_feature() {
        // Deterministic feature values independent of the alternating label.
        let n = 500;
        let feature: Vec<f64> = (0..n).map(|i| ((i * 2654435761) % 1000) as f64).collect();
        let mi = mutual_information(&feature, &interleaved_labels(n), 3, 7).unwrap();
        assert!(mi < 0.05, "MI = {mi}");
    }

    #[test]
    fn mi_close_to_ln2_for_separated_classes() {
        let n = 500;
        let labels = interleaved_labels(n);
        let feature: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| l as f64 * 10.0 + (i as f64 * 0.001))
            .collect();
        let mi = mutual_information(&feature, &labels, 3, 7).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 0.1, "MI = {mi}");
    }

    #[test]
    fn mi_is_deterministic_for_duplicated_columns() {
        let n = 200;
        let labels = interleaved_labels(n);
        let feature: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = mutual_information(&feature, &labels, 3, 11).unwrap();
        let b = mutual_information(&feature, &labels, 3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mi_rejects_tiny_classes() {
        let feature = vec![0.0, 1.0, 2.0, 3.0];
        assert!(mutual_information(&feature, &[0, 0, 0, 1], 3, 0).is_err());
    }

    #[test]
    fn bootstrap_single_iteration_reduces_to_single_shot() {
        let labels: Vec<Label> = interleaved_labels(40);
        let informative: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let noise: Vec<f64> = (0..40).map(|i| ((i * 7919) % 100) as f64 / 100.0).collect();
        let ds = dataset(&[informative, noise], &labels);
        let cfg = SelectionConfig {
            measure: Measure::S,
            d_prime: 1,
            bootstraps_b_s: 1,
            rng_seed: 3,
            ..SelectionConfig::default()
        };
        let out = bootstrap_select(&ds, &cfg).unwrap();
        assert_eq!(out.selected_indices, vec![0]);
        assert_eq!(out.score_table[0].len(), 1);
        assert_eq!(out.percentiles[0], out.score_table[0][0]);
    }

    #[test]
    fn bootstrap_finds_label_feature_among_noise() {
        let n = 60;
        let labels = interleaved_labels(n);
        let mut columns: Vec<Vec<f64>> = Vec::new();
        columns.push(labels.iter().map(|&l| l as f64).collect());
        for j in 1..20 {
            columns.push(
                (0..n)
                    .map(|i| (((i * 31 + j * 17) * 2654435761) % 1000) as f64 / 1000.0)
                    .collect(),
            );
        }
        let ds = dataset(&columns, &labels);
        let cfg = SelectionConfig {
            measure: Measure::M,
            d_prime: 1,
            bootstraps_b_s: 50,
            rng_seed: 5,
            ..SelectionConfig::default()
        };
        let out = bootstrap_select(&ds, &cfg).unwrap();
        assert_eq!(out.selected_indices, vec![0]);
    }

    #[test]
    fn bootstrap_is_deterministic_for_fixed_seed() {
        let n = 50;
        let labels = interleaved_labels(n);
        let columns: Vec<Vec<f64>> = (0..6)
            .map(|j| {
                (0..n)
                    .map(|i| ((i * (j + 3) * 2654435761) % 997) as f64 / 997.0 + labels[i] as f64 * (j as f64 * 0.1))
                    .collect()
            })
            .collect();
        let ds = dataset(&columns, &labels);
        let cfg = SelectionConfig {
            measure: Measure::F,
            d_prime: 3,
            bootstraps_b_s: 25,
            rng_seed: 42,
            ..SelectionConfig::default()
        };
        let a = bootstrap_select(&ds, &cfg).unwrap();
        let b = bootstrap_select(&ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    // Replacing a feature by 3x + 7 must not change its ranking under any
    // of the three measures.
    #[test]
    fn affine_rescaling_leaves_rankings_unchanged() {
        let n = 80;
        let labels = interleaved_labels(n);
        let base: Vec<Vec<f64>> = (0..4)
            .map(|j| {
                (0..n)
                    .map(|i| {
                        labels[i] as f64 * (0.3 + j as f64 * 0.25)
                            + (((i * 37 + j * 101) % 61) as f64 / 61.0)
                    })
                    .collect()
            })
            .collect();
        for measure in [Measure::F, Measure::S, Measure::M] {
            let cfg = SelectionConfig {
                measure,
                d_prime: 4,
                bootstraps_b_s: 10,
                rng_seed: 17,
                ..SelectionConfig::default()
            };
            let plain = bootstrap_select(&dataset(&base, &labels), &cfg).unwrap();
            let mut rescaled = base.clone();
            rescaled[1] = base[1].iter().map(|&v| 3.0 * v + 7.0).collect();
            let scaled = bootstrap_select(&dataset(&rescaled, &labels), &cfg).unwrap();
            assert_eq!(
                plain.selected_indices, scaled.selected_indices,
                "measure {measure}"
            );
        }
    }
}
