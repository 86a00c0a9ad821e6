//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for l in 0..n {
            let x = a[i * n + l];
            for j in 0..n {
                out[i * n + j] += x * b[l * n + j];
            }
        }
    }
    out
}

/// Characteristic polynomial coefficients, leading first, by Faddeev–LeVerrier.
pub fn char_poly(a: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n + 1];
    c[0] = 1.0;
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    for k in 1..=n {
        let am = matmul(a, &m, n);
        c[k] = -(0..n).map(|i| am[i * n + i]).sum::<f64>() / k as f64;
        m = am;
        for i in 0..n {
            m[i * n + i] += c[k];
        }
    }
    c
}

/// All roots of a monic polynomial by Durand–Kerner iteration.
pub fn poly_roots(c: &[f64]) -> Vec<(f64, f64)> {
    let n = c.len() - 1;
    let mul = |a: (f64, f64), b: (f64, f64)| (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0);
    let eval = |z: (f64, f64)| {
        c.iter().fold((0.0, 0.0), |acc, &ck| {
            let p = mul(acc, z);
            (p.0 + ck, p.1)
        })
    };
    let seed = (0.4, 0.9);
    let mut roots: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut z = (1.0, 0.0);
    for _ in 0..n {
        roots.push(z);
        z = mul(z, seed);
    }
    for _ in 0..10_000 {
        let mut moved: f64 = 0.0;
        for i in 0..n {
            let zi = roots[i];
            let mut den = (1.0, 0.0);
            for (j, &zj) in roots.iter().enumerate() {
                if j != i {
                    den = mul(den, (zi.0 - zj.0, zi.1 - zj.1));
                }
            }
            let p = eval(zi);
            let norm = den.0 * den.0 + den.1 * den.1;
            let q = (
                (p.0 * den.0 + p.1 * den.1) / norm,
                (p.1 * den.0 - p.0 * den.1) / norm,
            );
            roots[i] = (zi.0 - q.0, zi.1 - q.1);
            moved = moved.max(q.0.hypot(q.1));
        }
        if moved < 1e-14 {
            break;
        }
    }
    roots
}

pub fn spectral_radius_oracle(a: &[f64], n: usize) -> f64 {
    poly_roots(&char_poly(a, n))
        .iter()
        .map(|z| z.0.hypot(z.1))
        .fold(0.0, f64::max)
}

/// Per-sample KL objective of a tanh neuron `y = tanh(a·x + b)` against `N(mu, sigma²)`.
pub fn ip_loss(a: f64, b: f64, x: f64, mu: f64, sigma: f64) -> f64 {
    let y = (a * x + b).tanh();
    -a.ln() - (1.0 - y * y).ln() + (y - mu).powi(2) / (2.0 * sigma * sigma)
}

/// Central-difference gradient `(∂L/∂a, ∂L/∂b)`.
pub fn ip_loss_gradient(a: f64, b: f64, x: f64, mu: f64, sigma: f64) -> (f64, f64) {
    let h = 1e-6;
    let ga = (ip_loss(a + h, b, x, mu, sigma) - ip_loss(a - h, b, x, mu, sigma)) / (2.0 * h);
    let gb = (ip_loss(a, b + h, x, mu, sigma) - ip_loss(a, b - h, x, mu, sigma)) / (2.0 * h);
    (ga, gb)
}

/// SSE of a partition with clusters summed in order of first appearance, so equal partitions
/// under any labelling give the same bits.
pub fn partition_sse(points: &[f64], dim: usize, labels: &[usize]) -> f64 {
    let mut order: Vec<usize> = Vec::new();
    for &l in labels {
        if !order.contains(&l) {
            order.push(l);
        }
    }
    let mut total = 0.0;
    for &l in &order {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == l).collect();
        let mut mean = vec![0.0; dim];
        for &i in &members {
            for d in 0..dim {
                mean[d] += points[i * dim + d];
            }
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        for &i in &members {
            for d in 0..dim {
                total += (points[i * dim + d] - mean[d]).powi(2);
            }
        }
    }
    total
}

/// Minimum SSE over every assignment of `n` points to at most `k` clusters.
pub fn exhaustive_min_sse(points: &[f64], dim: usize, k: usize) -> f64 {
    let n = points.len() / dim;
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(partition_sse(points, dim, &labels));
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

/// Single-threshold Otsu written directly from the definition, with exact rational comparison of
/// `P0·P1·(μ0 − μ1)²` over every split `t` of the histogram into bins `[0, t)` and `[t, bins)`.
/// Returns the smallest maximizing `t`.
pub fn otsu_single_oracle(counts: &[u64]) -> usize {
    let n: u128 = counts.iter().map(|&c| c as u128).sum();
    let s: u128 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();
    // between-class variance ∝ (N·S0 − P0·S)² / (P0·P1); compare as fractions
    let mut best: Option<(u128, u128, usize)> = None;
    let (mut p0, mut s0) = (0u128, 0u128);
    for t in 1..counts.len() {
        p0 += counts[t - 1] as u128;
        s0 += (t - 1) as u128 * counts[t - 1] as u128;
        let p1 = n - p0;
        if p0 == 0 || p1 == 0 {
            continue;
        }
        let diff = (n * s0).abs_diff(p0 * s);
        let num = diff * diff;
        let den = p0 * p1;
        let better = match best {
            None => true,
            Some((bn, bd, _)) => num * bd > bn * den,
        };
        if better {
            best = Some((num, den, t));
        }
    }
    best.expect("two nonempty bins").2
}

/// Fuzzy c-means from the update equations: `c = Σ u^m x / Σ u^m`, then
/// `u_ij = 1 / Σ_l (d_ij / d_il)^(2/(m−1))`, stopping when no membership moves by `tol`.
pub fn fcm_oracle(
    points: &[f64],
    dim: usize,
    k: usize,
    m: f64,
    u0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Vec<f64> {
    let n = points.len() / dim;
    let centroids = |u: &[f64]| {
        let mut c = vec![0.0; k * dim];
        for j in 0..k {
            let mut w_sum = 0.0;
            for i in 0..n {
                let w = u[i * k + j].powf(m);
                w_sum += w;
                for d in 0..dim {
                    c[j * dim + d] += w * points[i * dim + d];
                }
            }
            for d in 0..dim {
                c[j * dim + d] /= w_sum;
            }
        }
        c
    };
    let mut u = u0.to_vec();
    let mut c = centroids(&u);
    for _ in 0..max_iter {
        let mut next = vec![0.0; n * k];
        for i in 0..n {
            let dist: Vec<f64> = (0..k)
                .map(|j| {
                    (0..dim)
                        .map(|d| (points[i * dim + d] - c[j * dim + d]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            if let Some(hit) = dist.iter().position(|&d| d == 0.0) {
                next[i * k + hit] = 1.0;
                continue;
            }
            for j in 0..k {
                let s: f64 = (0..k)
                    .map(|l| (dist[j] / dist[l]).powf(2.0 / (m - 1.0)))
                    .sum();
                next[i * k + j] = 1.0 / s;
            }
        }
        let delta = next
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = next;
        c = centroids(&u);
        if delta < tol {
            break;
        }
    }
    c
}

/// Subtractive clustering over every point (no deduplication). Returns the chosen point indices.
pub fn subtractive_oracle(
    points: &[f64],
    dim: usize,
    ra: f64,
    rb: f64,
    accept: f64,
    reject: f64,
    max_centers: usize,
) -> Vec<usize> {
    let n = points.len() / dim;
    let d2 = |i: usize, j: usize| -> f64 {
        (0..dim)
            .map(|d| (points[i * dim + d] - points[j * dim + d]).powi(2))
            .sum()
    };
    let alpha = 4.0 / (ra * ra);
    let beta = 4.0 / (rb * rb);
    let mut p: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| (-alpha * d2(i, j)).exp()).sum())
        .collect();
    let mut centers: Vec<usize> = Vec::new();
    let mut p1 = 0.0;
    while max_centers == 0 || centers.len() < max_centers {
        // first index among the maxima
        let c = (0..n).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        let pc = p[c];
        if centers.is_empty() {
            p1 = pc;
        } else if pc <= 0.0 || pc < reject * p1 {
            break;
        } else if pc <= accept * p1 {
            let dmin = centers
                .iter()
                .map(|&s| d2(c, s))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            if dmin / ra + pc / p1 < 1.0 {
                p[c] = 0.0;
                continue;
            }
        }
        centers.push(c);
        for i in 0..n {
            p[i] -= pc * (-beta * d2(i, c)).exp();
        }
    }
    centers
}
