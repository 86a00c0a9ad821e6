//! Fuzzy c-means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_points, sq_dist};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcmParams {
    pub k: usize,
    /// Fuzzifier, must exceed 1.
    pub m: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no membership changes by this much or more.
    pub tol: f64,
    pub execution: Execution,
}

impl Default for FcmParams {
    fn default() -> Self {
        FcmParams {
            k: 3,
            m: 2.0,
            seed: 42,
            max_iter: 500,
            tol: 1e-9,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcmResult {
    /// `n × k`, row-major; each row sums to one.
    pub memberships: Vec<f64>,
    pub labels: Vec<usize>,
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Seeded random membership matrix with rows normalized to one.
pub fn initial_memberships(n: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = Vec::with_capacity(n * k);
    for _ in 0..n {
        // keep entries away from zero so every cluster starts with some weight
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = row.iter().sum();
        u.extend(row.iter().map(|x| x / s));
    }
    u
}

/// Weighted centroids `Σ u^m x / Σ u^m`.
fn centroids_from(points: &[f64], dim: usize, k: usize, u: &[f64], m: f64) -> Vec<f64> {
    let mut num = vec![0.0; k * dim];
    let mut den = vec![0.0; k];
    for (p, row) in points.chunks_exact(dim).zip(u.chunks_exact(k)) {
        for c in 0..k {
            let w = row[c].powf(m);
            den[c] += w;
            for (acc, x) in num[c * dim..(c + 1) * dim].iter_mut().zip(p) {
                *acc += w * x;
            }
        }
    }
    for c in 0..k {
        num[c * dim..(c + 1) * dim]
            .iter_mut()
            .for_each(|v| *v /= den[c]);
    }
    num
}

/// Membership row of one point: `u_c = 1 / Σ_l (d_c / d_l)^(2/(m−1))`. A point sitting on a
/// centroid belongs to it (the first such centroid) with membership one.
fn membership_row(p: &[f64], centroids: &[f64], dim: usize, m: f64, out: &mut [f64]) {
    let k = out.len();
    let d2: Vec<f64> = (0..k)
        .map(|c| sq_dist(p, &centroids[c * dim..(c + 1) * dim]))
        .collect();
    if let Some(hit) = d2.iter().position(|&d| d == 0.0) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[hit] = 1.0;
        return;
    }
    // (d_c/d_l)^(2/(m-1)) = (d2_c/d2_l)^(1/(m-1))
    let e = 1.0 / (m - 1.0);
    for c in 0..k {
        let s: f64 = d2.iter().map(|&dl| (d2[c] / dl).powf(e)).sum();
        out[c] = 1.0 / s;
    }
}

pub fn fuzzy_cmeans(points: &[f64], dim: usize, params: &FcmParams) -> Result<FcmResult> {
    let n = check_points(points, dim)?;
    let k = params.k;
    if k == 0 {
        return Err(Error::param("clustering.k", "must be at least 1"));
    }
    if n < k {
        return Err(Error::InvalidData(format!(
            "{n} points cannot form {k} clusters"
        )));
    }
    if !(params.m.is_finite() && params.m > 1.0) {
        return Err(Error::param("clustering.fcm_m", "fuzzifier must exceed 1"));
    }
    if params.max_iter == 0 {
        return Err(Error::param("clustering.max_iter", "must be at least 1"));
    }

    let mut u = initial_memberships(n, k, params.seed);
    let mut centroids = centroids_from(points, dim, k, &u, params.m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        iterations += 1;
        let rows = params.execution.map_range(n, |i| {
            let mut row = vec![0.0; k];
            membership_row(
                &points[i * dim..(i + 1) * dim],
                &centroids,
                dim,
                params.m,
                &mut row,
            );
            row
        });
        let next: Vec<f64> = rows.into_iter().flatten().collect();
        let delta = next
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = next;
        centroids = centroids_from(points, dim, k, &u, params.m);
        if delta < params.tol {
            converged = true;
            break;
        }
    }
    if centroids.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical(
            "fuzzy c-means produced non-finite centroids".into(),
        ));
    }

    let labels = u
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    Ok(FcmResult {
        memberships: u,
        labels,
        centroids,
        iterations,
        converged,
    })
}
