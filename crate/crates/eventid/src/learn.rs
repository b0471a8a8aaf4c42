//! Classifiers and evaluation: L2-regularized logistic regression, an RBF
//! support vector machine trained by SMO, rank-based ROC AUC, bootstrap AUC
//! confidence intervals, and stratified k-fold confusion matrices.

use crate::core::{Dataset, Label};
use crate::error::{Error, Result};
use crate::par;
use crate::select::NormStats;
use crate::stats::{mean, percentile, resample_both_classes, stratified_folds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Lr,
    SvmRbf,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ModelKind::Lr),
            "svm" | "svm-rbf" => Ok(ModelKind::SvmRbf),
            other => Err(Error::config(format!(
                "unknown model {other} (expected lr or svm)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Lr => "lr",
            ModelKind::SvmRbf => "svm-rbf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub model: ModelKind,
    /// L2 penalty on the logistic-regression weights (not the bias).
    pub lr_lambda: f64,
    pub lr_max_iters: usize,
    /// Stop when the gradient inf-norm falls below this.
    pub lr_tol: f64,
    pub svm_c: f64,
    /// RBF width; `None` means 1 / (d * mean feature variance).
    pub svm_gamma: Option<f64>,
    pub svm_max_iters: usize,
    /// KKT violation tolerance for SMO working-pair selection.
    pub svm_tol: f64,
    /// Probability cut for hard predictions.
    pub threshold: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            model: ModelKind::Lr,
            lr_lambda: 1e-2,
            lr_max_iters: 2000,
            lr_tol: 1e-6,
            svm_c: 1.0,
            svm_gamma: None,
            svm_max_iters: 10_000,
            svm_tol: 1e-3,
            threshold: 0.5,
        }
    }
}

impl LearnerConfig {
    fn validate(&self) -> Result<()> {
        if self.lr_lambda < 0.0 {
            return Err(Error::config("lr_lambda must be non-negative"));
        }
        if self.svm_c <= 0.0 {
            return Err(Error::config("svm_c must be positive"));
        }
        if let Some(g) = self.svm_gamma {
            if g <= 0.0 {
                return Err(Error::config("svm_gamma must be positive"));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Fitted model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Lr {
        weights: Vec<f64>,
        bias: f64,
    },
    SvmRbf {
        /// alpha_i * y_i for each retained support vector (y in {-1, +1}).
        coeffs: Vec<f64>,
        support_vectors: Vec<Vec<f64>>,
        bias: f64,
        gamma: f64,
    },
}

/// A trained classifier together with everything needed to score new
/// events: the selected feature indices into the full feature vector and
/// the training-set normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// Indices into the full d-dimensional feature vector.
    pub selected_feature_indices: Vec<usize>,
    /// Fitted on the selected columns of the training set.
    pub norm_stats: NormStats,
    pub threshold: f64,
    pub converged: bool,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * sq).exp()
}

impl TrainedModel {
    /// Raw decision value for one already-normalized selected-feature row:
    /// the pre-sigmoid logit for LR, the signed margin for the SVM.
    pub fn decision_score(&self, x: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Lr { weights, bias } => {
                bias + weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>()
            }
            ModelParams::SvmRbf {
                coeffs,
                support_vectors,
                bias,
                gamma,
            } => {
                bias
                    + coeffs
                        .iter()
                        .zip(support_vectors.iter())
                        .map(|(c, sv)| c * rbf_kernel(sv, x, *gamma))
                        .sum::<f64>()
            }
        }
    }

    /// Scores a dataset holding the FULL feature vectors: projects onto the
    /// selected indices, applies the stored normalization, and returns one
    /// decision score per row.
    pub fn score_dataset(&self, full: &Dataset) -> Result<Vec<f64>> {
        let projected = full.project(&self.selected_feature_indices)?;
        let normalized = self.norm_stats.transform(&projected)?;
        Ok(normalized
            .rows
            .iter()
            .map(|r| self.decision_score(&r.values))
            .collect())
    }

    /// Hard 0/1 predictions using the configured probability threshold.
    /// SVM margins pass through the same sigmoid for a monotone mapping.
    pub fn predict(&self, full: &Dataset) -> Result<Vec<Label>> {
        Ok(self
            .score_dataset(full)?
            .into_iter()
            .map(|s| u8::from(sigmoid(s) >= self.threshold))
            .collect())
    }
}

/// Mean regularized negative log-likelihood of the logistic model.
/// `theta` is [bias, w_1, ..., w_d]; the bias is not penalized.
pub fn lr_loss(theta: &[f64], rows: &[Vec<f64>], labels: &[Label], lambda: f64) -> f64 {
    let n = rows.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in rows.iter().zip(labels.iter()) {
        let t = theta[0]
            + theta[1..]
                .iter()
                .zip(x.iter())
                .map(|(w, v)| w * v)
                .sum::<f64>();
        // log(1 + e^-|t|) stays finite for large |t|.
        let log1p_exp = if t > 0.0 {
            (-t).exp().ln_1p()
        } else {
            t.exp().ln_1p() - t
        };
        loss += if y == 1 { log1p_exp } else { log1p_exp + t };
    }
    loss / n + 0.5 * lambda * theta[1..].iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`lr_loss`] with respect to `theta`.
pub fn lr_grad(theta: &[f64], rows: &[Vec<f64>], labels: &[Label], lambda: f64) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut grad = vec![0.0; theta.len()];
    for (x, &y) in rows.iter().zip(labels.iter()) {
        let t = theta[0]
            + theta[1..]
                .iter()
                .zip(x.iter())
                .map(|(w, v)| w * v)
                .sum::<f64>();
        let err = sigmoid(t) - y as f64;
        grad[0] += err;
        for (g, v) in grad[1..].iter_mut().zip(x.iter()) {
            *g += err * v;
        }
    }
    for g in grad.iter_mut() {
        *g /= n;
    }
    for (g, w) in grad[1..].iter_mut().zip(theta[1..].iter()) {
        *g += lambda * w;
    }
    grad
}

fn check_training_inputs(train: &Dataset) -> Result<()> {
    if train.n_features() == 0 {
        return Err(Error::invalid("training data has no features"));
    }
    let labels = train.labels();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::invalid("training data must contain both classes"));
    }
    Ok(())
}

/// Full-batch gradient descent with backtracking line search from a zero
/// start. Deterministic. `train` must already be normalized.
pub fn train_lr(train: &Dataset, cfg: &LearnerConfig) -> Result<(ModelParams, bool)> {
    cfg.validate()?;
    check_training_inputs(train)?;
    let rows: Vec<Vec<f64>> = train.rows.iter().map(|r| r.values.clone()).collect();
    let labels = train.labels();
    let mut theta = vec![0.0; train.n_features() + 1];
    let mut loss = lr_loss(&theta, &rows, &labels, cfg.lr_lambda);
    let mut converged = false;
    for _ in 0..cfg.lr_max_iters {
        let grad = lr_grad(&theta, &rows, &labels, cfg.lr_lambda);
        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm <= cfg.lr_tol {
            converged = true;
            break;
        }
        let grad_sq: f64 = grad.iter().map(|g| g * g).sum();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(grad.iter())
                .map(|(t, g)| t - step * g)
                .collect();
            let new_loss = lr_loss(&candidate, &rows, &labels, cfg.lr_lambda);
            // Armijo sufficient-decrease condition.
            if new_loss <= loss - 1e-4 * step * grad_sq {
                theta = candidate;
                loss = new_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((
        ModelParams::Lr {
            weights: theta[1..].to_vec(),
            bias: theta[0],
        },
        converged,
    ))
}

/// Default RBF width: 1 / (d * mean per-feature population variance).
pub fn auto_gamma(train: &Dataset) -> f64 {
    let d = train.n_features();
    let mean_var = (0..d)
        .map(|j| crate::stats::population_variance(&train.column(j)))
        .sum::<f64>()
        / d as f64;
    if mean_var > 0.0 {
        1.0 / (d as f64 * mean_var)
    } else {
        1.0 / d as f64
    }
}

/// SVM dual objective sum(alpha) - 0.5 * sum_ij alpha_i alpha_j y_i y_j K_ij
/// for signed labels `y` in {-1, +1}.
pub fn svm_dual_objective(alpha: &[f64], y: &[f64], kernel: &[Vec<f64>]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * kernel[i][j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Soft-margin RBF SVM trained with SMO using maximal-violating-pair
/// working-set selection. `train` must already be normalized.
pub fn train_svm_rbf(train: &Dataset, cfg: &LearnerConfig) -> Result<(ModelParams, bool)> {
    cfg.validate()?;
    check_training_inputs(train)?;
    let n = train.n_rows();
    let rows: Vec<Vec<f64>> = train.rows.iter().map(|r| r.values.clone()).collect();
    let y: Vec<f64> = train
        .labels()
        .iter()
        .map(|&l| if l == 1 { 1.0 } else { -1.0 })
        .collect();
    let gamma = cfg.svm_gamma.unwrap_or_else(|| auto_gamma(train));
    let c = cfg.svm_c;

    let kernel: Vec<Vec<f64>> = par::map_range(n, |i| {
        (0..n).map(|j| rbf_kernel(&rows[i], &rows[j], gamma)).collect()
    });

    let mut alpha = vec![0.0f64; n];
    // Gradient of the dual objective in the f_i = sum_j alpha_j y_j K_ij - y_i
    // convention used by LIBSVM-style solvers.
    let mut f: Vec<f64> = y.iter().map(|&yi| -yi).collect();
    let mut converged = false;
    for _ in 0..cfg.svm_max_iters {
        // Maximal violating pair over the feasibility sets
        // I_up = {i : alpha_i < C, y_i = +1} u {i : alpha_i > 0, y_i = -1}
        // I_low symmetric.
        let mut i_up: Option<usize> = None;
        let mut i_low: Option<usize> = None;
        let mut up_val = f64::NEG_INFINITY;
        let mut low_val = f64::INFINITY;
        for t in 0..n {
            let can_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let can_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            let v = -f[t];
            if can_up && v > up_val {
                up_val = v;
                i_up = Some(t);
            }
            if can_low && v < low_val {
                low_val = v;
                i_low = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i_up, i_low) else {
            break;
        };
        if up_val - low_val <= cfg.svm_tol {
            converged = true;
            break;
        }
        // Analytic two-variable update along the equality constraint.
        let eta = (kernel[i][i] + kernel[j][j] - 2.0 * kernel[i][j]).max(1e-12);
        let delta = (up_val - low_val) / eta;
        // Clip to the box for both multipliers.
        let max_step_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let max_step_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let step = delta.min(max_step_i).min(max_step_j);
        if step <= 0.0 {
            converged = true;
            break;
        }
        // delta alpha_i = +y_i step, delta alpha_j = -y_j step keeps
        // sum alpha_t y_t = 0 while both multipliers stay inside the box.
        alpha[i] += y[i] * step;
        alpha[j] -= y[j] * step;
        for t in 0..n {
            f[t] += step * (kernel[i][t] - kernel[j][t]);
        }
    }
    // Bias from the KKT conditions: average -y_i f_i over free vectors,
    // else the midpoint of the feasible interval.
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut up_val = f64::NEG_INFINITY;
    let mut low_val = f64::INFINITY;
    for t in 0..n {
        let v = -f[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += v;
            free_count += 1;
        }
        let can_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
        let can_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
        if can_up {
            up_val = up_val.max(v);
        }
        if can_low {
            low_val = low_val.min(v);
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        (up_val + low_val) / 2.0
    };

    let mut coeffs = Vec::new();
    let mut support_vectors = Vec::new();
    for t in 0..n {
        if alpha[t] > 1e-12 {
            coeffs.push(alpha[t] * y[t]);
            support_vectors.push(rows[t].clone());
        }
    }
    Ok((
        ModelParams::SvmRbf {
            coeffs,
            support_vectors,
            bias,
            gamma,
        },
        converged,
    ))
}

/// Trains the configured model on an already-normalized selected-feature
/// training set and packages it with the projection and normalization.
pub fn train_model(
    normalized_train: &Dataset,
    selected_feature_indices: Vec<usize>,
    norm_stats: NormStats,
    cfg: &LearnerConfig,
) -> Result<TrainedModel> {
    let (params, converged) = match cfg.model {
        ModelKind::Lr => train_lr(normalized_train, cfg)?,
        ModelKind::SvmRbf => train_svm_rbf(normalized_train, cfg)?,
    };
    Ok(TrainedModel {
        params,
        selected_feature_indices,
        norm_stats,
        threshold: cfg.threshold,
        converged,
    })
}

/// Area under the ROC curve via the rank-sum identity with midranks for
/// tied scores. Exactly 0.5 when all scores tie.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("roc_auc: length mismatch"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("roc_auc needs both classes"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("roc_auc: non-finite score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j].
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg as f64))
}

/// 2x2 confusion counts with `matrix[actual][predicted]` layout and
/// actual-class row percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
    pub row_percent: [[f64; 2]; 2],
}

impl Confusion {
    pub fn from_pairs(actual: &[Label], predicted: &[Label]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::invalid("confusion: length mismatch"));
        }
        let mut counts = [[0usize; 2]; 2];
        for (&a, &p) in actual.iter().zip(predicted.iter()) {
            if a > 1 || p > 1 {
                return Err(Error::invalid("confusion: label outside {0,1}"));
            }
            counts[a as usize][p as usize] += 1;
        }
        let mut row_percent = [[0.0; 2]; 2];
        for r in 0..2 {
            let total = (counts[r][0] + counts[r][1]) as f64;
            if total > 0.0 {
                row_percent[r][0] = 100.0 * counts[r][0] as f64 / total;
                row_percent[r][1] = 100.0 * counts[r][1] as f64 / total;
            }
        }
        Ok(Confusion {
            counts,
            row_percent,
        })
    }

    pub fn accuracy(&self) -> f64 {
        let correct = self.counts[0][0] + self.counts[1][1];
        let total: usize = self.counts.iter().flatten().sum();
        correct as f64 / total as f64
    }
}

/// Bootstrap AUC summary over B_c resamples of the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_mean: f64,
    pub auc_p5: f64,
    pub auc_p95: f64,
    pub per_bootstrap_auc: Vec<f64>,
    pub confusion: Option<Confusion>,
}

/// Scores the test set once, then bootstraps the (score, label) pairs B_c
/// times and reports the mean and the 5th/95th percentiles of the AUC.
pub fn bootstrap_evaluate(
    model: &TrainedModel,
    test_full: &Dataset,
    bootstraps_b_c: usize,
    seed: u64,
) -> Result<EvalReport> {
    if bootstraps_b_c < 1 {
        return Err(Error::config("bootstraps must be at least 1"));
    }
    let scores = model.score_dataset(test_full)?;
    let labels = test_full.labels();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::invalid("test data must contain both classes"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let iter_seeds: Vec<u64> = (0..bootstraps_b_c).map(|_| master.gen()).collect();
    let per_bootstrap: Vec<Result<f64>> = par::map_slice(&iter_seeds, |&s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let draw = resample_both_classes(&labels, 1, &mut rng)?;
        let s: Vec<f64> = draw.iter().map(|&i| scores[i]).collect();
        let l: Vec<Label> = draw.iter().map(|&i| labels[i]).collect();
        roc_auc(&s, &l)
    });
    let per_bootstrap_auc: Vec<f64> = per_bootstrap.into_iter().collect::<Result<_>>()?;
    let mut sorted = per_bootstrap_auc.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let predictions = model.predict(test_full)?;
    Ok(EvalReport {
        auc_mean: mean(&per_bootstrap_auc),
        auc_p5: percentile(&sorted, 5.0),
        auc_p95: percentile(&sorted, 95.0),
        per_bootstrap_auc,
        confusion: Some(Confusion::from_pairs(&labels, &predictions)?),
    })
}

/// Stratified k-fold cross validation of the full pipeline tail: for each
/// fold, fit normalization on the training split, train, and predict the
/// held-out split; out-of-fold predictions are pooled into one confusion
/// matrix. `full` holds the already-selected feature columns.
pub fn kfold_confusion(
    full: &Dataset,
    cfg: &LearnerConfig,
    folds: usize,
    seed: u64,
) -> Result<Confusion> {
    if folds < 2 || folds > full.n_rows() {
        return Err(Error::config(format!("fold count {folds} out of range")));
    }
    let labels = full.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = stratified_folds(&labels, folds, &mut rng)?;
    let all_indices: Vec<usize> = (0..full.n_rows()).collect();
    let mut actual = Vec::with_capacity(full.n_rows());
    let mut predicted = Vec::with_capacity(full.n_rows());
    for fold in 0..folds {
        let test_idx: Vec<usize> = all_indices
            .iter()
            .copied()
            .filter(|&i| assignment[i] == fold)
            .collect();
        let train_idx: Vec<usize> = all_indices
            .iter()
            .copied()
            .filter(|&i| assignment[i] != fold)
            .collect();
        if test_idx.is_empty() {
            continue;
        }
        let train = full.subset(&train_idx);
        let test = full.subset(&test_idx);
        let (normalized, norm_stats) = crate::select::zscore_fit_transform(&train)?;
        let identity: Vec<usize> = (0..full.n_features()).collect();
        let model = train_model(&normalized, identity, norm_stats, cfg)?;
        let preds = model.predict(&test)?;
        actual.extend(test_idx.iter().map(|&i| labels[i]));
        predicted.extend(preds);
    }
    Confusion::from_pairs(&actual, &predicted)
}
