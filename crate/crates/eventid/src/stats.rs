//! Small shared statistics helpers.

use crate::core::Label;
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/N) variance.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Percentile by linear interpolation between closest ranks.
/// `sorted` must be ascending; `p` in (0, 100].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    if sorted.len() == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Draws `n` indices in `0..n` with replacement, redrawing (up to 100 times)
/// whenever the resample has fewer than `min_per_class` members of a class.
pub fn resample_both_classes<R: Rng>(
    labels: &[Label],
    min_per_class: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = labels.len();
    for _ in 0..100 {
        let draw: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let n1 = draw.iter().filter(|&&i| labels[i] == 1).count();
        if n1 >= min_per_class && n - n1 >= min_per_class {
            return Ok(draw);
        }
    }
    Err(Error::numerical(
        "bootstrap resampling produced class-degenerate draws 100 times in a row",
    ))
}

/// Stratified fold assignment: returns `fold[i]` in `0..folds` for every row.
/// Each class is shuffled independently and dealt round-robin, so every fold
/// keeps both classes whenever counts allow.
pub fn stratified_folds<R: Rng>(labels: &[Label], folds: usize, rng: &mut R) -> Result<Vec<usize>> {
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    if by_class[0].len() < folds || by_class[1].len() < folds {
        return Err(Error::invalid(format!(
            "stratified {folds}-fold split needs at least {folds} rows per class \
             (got {} / {})",
            by_class[0].len(),
            by_class[1].len()
        )));
    }
    let mut assignment = vec![0usize; labels.len()];
    for class_rows in by_class.iter_mut() {
        class_rows.shuffle(rng);
        for (pos, &row) in class_rows.iter().enumerate() {
            assignment[row] = pos % folds;
        }
    }
    Ok(assignment)
}

/// Stratified train/test split: per class, a seeded shuffle sends the first
/// `round(fraction * count)` rows to the training side, clamped so both
/// sides keep at least one row of each class. Returned index lists are
/// sorted, so the split is a pure function of (labels, fraction, seed).
pub fn stratified_split(
    labels: &[Label],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    if by_class[0].len() < 2 || by_class[1].len() < 2 {
        return Err(Error::invalid(
            "stratified split needs at least 2 rows per class",
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class_rows in by_class.iter_mut() {
        class_rows.shuffle(&mut rng);
        let count = class_rows.len();
        let take = ((train_fraction * count as f64).round() as usize).clamp(1, count - 1);
        train.extend_from_slice(&class_rows[..take]);
        test.extend_from_slice(&class_rows[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
