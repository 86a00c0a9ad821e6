//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_points, sq_dist};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest SSE wins, ties go to the earliest restart.
    pub restarts: usize,
    pub execution: Execution,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            k: 3,
            seed: 42,
            max_iter: 300,
            tol: 1e-9,
            restarts: 10,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// `k × dim`, row-major.
    pub centroids: Vec<f64>,
    pub sse: f64,
    pub iterations: usize,
    /// SSE after seeding, after every Lloyd iteration and after refinement if it moved anything.
    pub sse_history: Vec<f64>,
}

/// Best of `params.restarts` k-means runs on `n × dim` row-major `points`.
pub fn kmeans(points: &[f64], dim: usize, params: &KMeansParams) -> Result<KMeansResult> {
    if params.restarts == 0 {
        return Err(Error::param("clustering.restarts", "must be at least 1"));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..params.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(r as u64);
        let run = kmeans_run(points, dim, params, &mut rng)?;
        if best.as_ref().is_none_or(|b| run.sse < b.sse) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// A single seeded run.
pub fn kmeans_once(
    points: &[f64],
    dim: usize,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansResult> {
    let params = KMeansParams {
        k,
        seed,
        max_iter,
        tol,
        restarts: 1,
        execution: Execution::Sequential,
    };
    kmeans(points, dim, &params)
}

fn kmeans_run(
    points: &[f64],
    dim: usize,
    params: &KMeansParams,
    rng: &mut ChaCha8Rng,
) -> Result<KMeansResult> {
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
    if params.max_iter == 0 {
        return Err(Error::param("clustering.max_iter", "must be at least 1"));
    }
    if !(params.tol >= 0.0) {
        return Err(Error::param("clustering.tol", "must be non-negative"));
    }

    let mut centroids = plus_plus_seed(points, dim, k, rng);
    let (mut labels, mut dists) = assign(points, dim, &centroids, params.execution);
    let mut sse_history = vec![dists.iter().sum::<f64>()];
    let mut iterations = 0;

    // Lloyd to convergence, then single-point moves; repeat while the moves change anything
    loop {
        while iterations < params.max_iter {
            iterations += 1;
            let mut next = means(points, dim, k, &labels);
            repair_empty(points, dim, &mut labels, &mut dists, &mut next, &centroids);
            let shift = (0..k)
                .map(|c| {
                    sq_dist(
                        &centroids[c * dim..(c + 1) * dim],
                        &next[c * dim..(c + 1) * dim],
                    )
                })
                .fold(0.0, f64::max)
                .sqrt();
            centroids = next;
            let (new_labels, new_dists) = assign(points, dim, &centroids, params.execution);
            let changed = new_labels != labels;
            labels = new_labels;
            dists = new_dists;
            sse_history.push(dists.iter().sum());
            if !changed || shift < params.tol {
                break;
            }
        }

        // repair can only run inside the loop; a final assignment may still leave a cluster empty
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        if counts.contains(&0) {
            let prev = centroids.clone();
            repair_empty(points, dim, &mut labels, &mut dists, &mut centroids, &prev);
        }

        if iterations >= params.max_iter
            || hartigan_refine(points, dim, k, &mut labels, params.max_iter) == 0
        {
            break;
        }
        centroids = means(points, dim, k, &labels);
        let (new_labels, new_dists) = assign(points, dim, &centroids, params.execution);
        labels = new_labels;
        dists = new_dists;
        sse_history.push(dists.iter().sum());
    }

    Ok(KMeansResult {
        sse: dists.iter().sum(),
        labels,
        centroids,
        iterations,
        sse_history,
    })
}

/// Single-point moves after Lloyd converges: a point leaves cluster `a` for `b` when
/// `n_a/(n_a−1)·‖x−c_a‖² > n_b/(n_b+1)·‖x−c_b‖²`, which strictly lowers the SSE. Lloyd fixed
/// points are not always stable under these moves, so this escapes some local minima. Returns the
/// number of moves made.
fn hartigan_refine(
    points: &[f64],
    dim: usize,
    k: usize,
    labels: &mut [usize],
    max_passes: usize,
) -> usize {
    let n = labels.len();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    let mut centroids = means(points, dim, k, labels);
    let mut moves = 0;
    for _ in 0..max_passes {
        let mut moved = false;
        for i in 0..n {
            let a = labels[i];
            if counts[a] < 2 {
                continue;
            }
            let x = &points[i * dim..(i + 1) * dim];
            let na = counts[a] as f64;
            let leave = na / (na - 1.0) * sq_dist(x, &centroids[a * dim..(a + 1) * dim]);
            let mut best = (a, leave);
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let join = nb / (nb + 1.0) * sq_dist(x, &centroids[b * dim..(b + 1) * dim]);
                if join < best.1 {
                    best = (b, join);
                }
            }
            let b = best.0;
            // demand a margin so rounding in the running means cannot cause cycling
            if b == a || leave - best.1 <= 1e-12 * leave.max(f64::MIN_POSITIVE) {
                continue;
            }
            let nb = counts[b] as f64;
            for d in 0..dim {
                let ca = &mut centroids[a * dim + d];
                *ca = (*ca * na - x[d]) / (na - 1.0);
                let cb = &mut centroids[b * dim + d];
                *cb = (*cb * nb + x[d]) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            labels[i] = b;
            moves += 1;
            moved = true;
        }
        if !moved {
            break;
        }
    }
    moves
}

/// k-means++: first centre uniform, the rest drawn with probability proportional to squared
/// distance from the nearest chosen centre.
fn plus_plus_seed(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| {
            sq_dist(
                &points[i * dim..(i + 1) * dim],
                &points[chosen[0] * dim..(chosen[0] + 1) * dim],
            )
        })
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every point coincides with a chosen centre
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(pick);
        let c = &points[pick * dim..(pick + 1) * dim];
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(&points[i * dim..(i + 1) * dim], c));
        }
    }
    chosen
        .iter()
        .flat_map(|&i| points[i * dim..(i + 1) * dim].iter().copied())
        .collect()
}

/// Nearest centroid per point (lowest index on ties) and the squared distance to it.
pub(crate) fn assign(
    points: &[f64],
    dim: usize,
    centroids: &[f64],
    exec: Execution,
) -> (Vec<usize>, Vec<f64>) {
    let n = points.len() / dim;
    let k = centroids.len() / dim;
    let nearest = |i: usize| {
        let p = &points[i * dim..(i + 1) * dim];
        let mut best = (0, sq_dist(p, &centroids[..dim]));
        for c in 1..k {
            let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    };
    exec.map_range(n, nearest).into_iter().unzip()
}

fn means(points: &[f64], dim: usize, k: usize, labels: &[usize]) -> Vec<f64> {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.chunks_exact(dim).zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(p) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .for_each(|s| *s /= counts[c] as f64);
        }
    }
    sums
}

/// Gives each empty cluster the point lying farthest from its current centroid (taken from a
/// cluster with more than one member).
fn repair_empty(
    points: &[f64],
    dim: usize,
    labels: &mut [usize],
    dists: &mut [f64],
    centroids: &mut [f64],
    previous: &[f64],
) {
    let k = centroids.len() / dim;
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut donor: Option<(usize, f64)> = None;
        for (i, &l) in labels.iter().enumerate() {
            if counts[l] > 1 && donor.is_none_or(|(_, d)| dists[i] > d) {
                donor = Some((i, dists[i]));
            }
        }
        let Some((i, _)) = donor else {
            // cannot happen while n >= k
            centroids[c * dim..(c + 1) * dim].copy_from_slice(&previous[c * dim..(c + 1) * dim]);
            continue;
        };
        counts[labels[i]] -= 1;
        counts[c] = 1;
        labels[i] = c;
        dists[i] = 0.0;
        centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[i * dim..(i + 1) * dim]);
    }
}
