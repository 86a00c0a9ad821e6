//! Scalar thresholding: equally spaced levels and exhaustive multi-level Otsu.

use crate::error::{Error, Result};
use crate::features::bin_index;

/// Largest class count accepted by [`otsu_multilevel`].
pub const OTSU_MAX_K: usize = 5;

/// `k − 1` thresholds spaced evenly over `[lo, hi]`.
pub fn hard_thresholds(k: usize, lo: f64, hi: f64) -> Vec<f64> {
    (1..k)
        .map(|j| lo + j as f64 * (hi - lo) / k as f64)
        .collect()
}

/// Label of each value: the number of thresholds at or below it.
pub fn hard_threshold(values: &[f64], k: usize, lo: f64, hi: f64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::param(
            "clustering.k",
            "hard thresholding needs k >= 2",
        ));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::param(
            "range",
            format!("need hi > lo, got [{lo}, {hi}]"),
        ));
    }
    if let Some(v) = values.iter().find(|v| !(lo..=hi).contains(*v)) {
        return Err(Error::InvalidData(format!(
            "value {v} outside [{lo}, {hi}]"
        )));
    }
    let t = hard_thresholds(k, lo, hi);
    Ok(values
        .iter()
        .map(|v| t.iter().take_while(|&&th| th <= *v).count())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtsuResult {
    /// Threshold values on the `[-1, 1]` axis, ascending.
    pub thresholds: Vec<f64>,
    /// Threshold positions as bin boundaries: class `j` spans bins `[b_{j-1}, b_j)`.
    pub boundaries: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Multi-level Otsu over a `bins`-bin histogram of `values` on `[-1, 1]`.
///
/// All boundary tuples that leave every class nonempty are searched; the one maximizing the
/// between-class variance wins, ties going to the lexicographically smallest tuple. Class sums
/// are accumulated in integers over bin indices so equal candidates compare exactly equal.
pub fn otsu_multilevel(values: &[f64], k: usize, bins: usize) -> Result<OtsuResult> {
    if !(2..=OTSU_MAX_K).contains(&k) {
        return Err(Error::param(
            "clustering.k",
            format!("Otsu thresholding supports 2 <= k <= {OTSU_MAX_K}, got {k}"),
        ));
    }
    if bins < k {
        return Err(Error::param(
            "clustering.otsu_bins",
            format!("need at least k = {k} bins"),
        ));
    }
    if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::InvalidData(format!("value {v} outside [-1, 1]")));
    }
    let bin_of: Vec<usize> = values
        .iter()
        .map(|&v| bin_index(v, -1.0, 1.0, bins))
        .collect();
    let mut counts = vec![0u64; bins];
    bin_of.iter().for_each(|&b| counts[b] += 1);
    let nonempty = counts.iter().filter(|&&c| c > 0).count();
    if nonempty < k {
        return Err(Error::InvalidData(format!(
            "only {nonempty} nonempty histogram bins for {k} classes"
        )));
    }

    let boundaries = best_boundaries(&counts, k);
    let width = 2.0 / bins as f64;
    let thresholds = boundaries
        .iter()
        .map(|&b| -1.0 + b as f64 * width)
        .collect();
    let labels = bin_of
        .iter()
        .map(|&b| boundaries.iter().take_while(|&&t| t <= b).count())
        .collect();
    Ok(OtsuResult {
        thresholds,
        boundaries,
        labels,
    })
}

/// Exhaustive search maximizing `Σ_j S_j² / P_j` (between-class variance up to constants), where
/// `P_j` is the class count and `S_j` the class sum of bin indices.
fn best_boundaries(counts: &[u64], k: usize) -> Vec<usize> {
    let bins = counts.len();
    let mut p = vec![0u64; bins + 1];
    let mut s = vec![0u128; bins + 1];
    for (i, &c) in counts.iter().enumerate() {
        p[i + 1] = p[i] + c;
        s[i + 1] = s[i] + i as u128 * c as u128;
    }
    let class_term = |a: usize, b: usize| -> Option<f64> {
        let n = p[b] - p[a];
        if n == 0 {
            return None;
        }
        let sum = (s[b] - s[a]) as f64;
        Some(sum * sum / n as f64)
    };

    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(k - 1);
    search(1, k - 1, bins, &mut current, &class_term, &mut best);
    best.expect("at least k nonempty bins").1
}

fn search(
    start: usize,
    remaining: usize,
    bins: usize,
    current: &mut Vec<usize>,
    class_term: &impl Fn(usize, usize) -> Option<f64>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if remaining == 0 {
        let mut total = 0.0;
        let mut lo = 0;
        for &b in current.iter().chain(std::iter::once(&bins)) {
            match class_term(lo, b) {
                Some(t) => total += t,
                None => return,
            }
            lo = b;
        }
        if best.as_ref().is_none_or(|(v, _)| total > *v) {
            *best = Some((total, current.clone()));
        }
        return;
    }
    // the last boundary must leave room for the remaining classes
    for b in start..=bins - remaining {
        let lo = current.last().copied().unwrap_or(0);
        if class_term(lo, b).is_none() {
            continue;
        }
        current.push(b);
        search(b + 1, remaining - 1, bins, current, class_term, best);
        current.pop();
    }
}
