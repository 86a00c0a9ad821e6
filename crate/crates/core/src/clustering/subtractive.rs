//! Subtractive (mountain) clustering.
//!
//! Every point starts with potential `P_i = Σ_j exp(−4‖x_i − x_j‖² / ra²)`. The highest-potential
//! point becomes a centre and every potential is reduced by
//! `P_c · exp(−4‖x_i − x_c‖² / rb²)`. Later candidates are accepted when their potential exceeds
//! `accept_ratio · P_first`, rejected outright below `reject_ratio · P_first`, and in between
//! accepted only if `d_min / ra + P / P_first ≥ 1`, where `d_min` is the distance to the nearest
//! existing centre. A candidate rejected that way has its potential zeroed and the next one is
//! tested.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{check_points, sq_dist};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubtractiveParams {
    /// Neighbourhood radius `ra`, in the units of the data.
    pub ra: f64,
    /// `rb = rb_factor · ra`.
    pub rb_factor: f64,
    pub accept_ratio: f64,
    pub reject_ratio: f64,
    /// Stop after this many centres; 0 means no cap.
    pub max_centers: usize,
}

impl Default for SubtractiveParams {
    fn default() -> Self {
        SubtractiveParams {
            ra: 0.5,
            rb_factor: 1.5,
            accept_ratio: 0.5,
            reject_ratio: 0.15,
            max_centers: 0,
        }
    }
}

impl SubtractiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ra.is_finite() && self.ra > 0.0) {
            return Err(Error::param("subtractive.ra", "must be positive"));
        }
        if !(self.rb_factor.is_finite() && self.rb_factor > 0.0) {
            return Err(Error::param("subtractive.rb_factor", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.reject_ratio)
            || !(0.0..=1.0).contains(&self.accept_ratio)
            || self.reject_ratio > self.accept_ratio
        {
            return Err(Error::param(
                "subtractive.accept_ratio",
                "need 0 <= reject_ratio <= accept_ratio <= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubtractiveResult {
    /// `n_centers × dim`, row-major, in selection order.
    pub centers: Vec<f64>,
    /// Index (into the input) of the point chosen as each centre.
    pub center_indices: Vec<usize>,
    /// Potential of each centre at the moment it was selected.
    pub center_potentials: Vec<f64>,
    pub labels: Vec<usize>,
}

impl SubtractiveResult {
    pub fn n_centers(&self) -> usize {
        self.center_indices.len()
    }
}

/// Runs on the distinct points with multiplicity weights, which gives the same centres as running
/// on every point: duplicates share a potential and are all cancelled when one becomes a centre.
pub fn subtractive_clustering(
    points: &[f64],
    dim: usize,
    params: &SubtractiveParams,
) -> Result<SubtractiveResult> {
    let n = check_points(points, dim)?;
    params.validate()?;

    // distinct points in first-occurrence order
    let mut slot_of: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut first_index = Vec::new();
    let mut weight: Vec<f64> = Vec::new();
    for i in 0..n {
        let key: Vec<u64> = points[i * dim..(i + 1) * dim]
            .iter()
            .map(|x| x.to_bits())
            .collect();
        let s = *slot_of.entry(key).or_insert_with(|| {
            first_index.push(i);
            weight.push(0.0);
            first_index.len() - 1
        });
        weight[s] += 1.0;
    }
    let m = first_index.len();
    let pt = |s: usize| &points[first_index[s] * dim..(first_index[s] + 1) * dim];

    let alpha = 4.0 / (params.ra * params.ra);
    let rb = params.rb_factor * params.ra;
    let beta = 4.0 / (rb * rb);

    let mut potential: Vec<f64> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| weight[j] * (-alpha * sq_dist(pt(i), pt(j))).exp())
                .sum()
        })
        .collect();

    let argmax = |p: &[f64]| {
        let mut best = 0;
        for i in 1..p.len() {
            if p[i] > p[best] {
                best = i;
            }
        }
        best
    };

    let mut centers: Vec<usize> = Vec::new();
    let mut center_potentials = Vec::new();
    let mut first_potential = 0.0;
    loop {
        if params.max_centers > 0 && centers.len() >= params.max_centers {
            break;
        }
        let c = argmax(&potential);
        let pc = potential[c];
        if centers.is_empty() {
            first_potential = pc;
        } else if pc <= 0.0 || pc < params.reject_ratio * first_potential {
            break;
        } else if pc <= params.accept_ratio * first_potential {
            let d_min = centers
                .iter()
                .map(|&s| sq_dist(pt(c), pt(s)))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            if d_min / params.ra + pc / first_potential < 1.0 {
                potential[c] = 0.0;
                continue;
            }
        }
        centers.push(c);
        center_potentials.push(pc);
        for i in 0..m {
            potential[i] -= pc * (-beta * sq_dist(pt(i), pt(c))).exp();
        }
    }

    let center_coords: Vec<f64> = centers
        .iter()
        .flat_map(|&s| pt(s).iter().copied())
        .collect();
    let labels = (0..n)
        .map(|i| {
            let p = &points[i * dim..(i + 1) * dim];
            let mut best = (0, f64::INFINITY);
            for (j, c) in center_coords.chunks_exact(dim).enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect();
    Ok(SubtractiveResult {
        centers: center_coords,
        center_indices: centers.iter().map(|&s| first_index[s]).collect(),
        center_potentials,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_give_one_center() {
        let pts = [0.3; 10];
        let r = subtractive_clustering(&pts, 1, &SubtractiveParams::default()).unwrap();
        assert_eq!(r.centers, vec![0.3]);
        assert_eq!(r.center_indices, vec![0]);
        assert!(r.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn two_blobs_give_two_centers() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let jitter = i as f64 * 0.001;
            pts.extend_from_slice(&[-0.8 + jitter, 0.1 - jitter]);
            pts.extend_from_slice(&[0.8 - jitter, -0.1 + jitter]);
        }
        let params = SubtractiveParams {
            ra: 0.3,
            ..Default::default()
        };
        let r = subtractive_clustering(&pts, 2, &params).unwrap();
        assert_eq!(r.n_centers(), 2);
        assert!(r.centers[0] * r.centers[2] < 0.0);
        for i in 0..20 {
            assert_eq!(r.labels[i], r.labels[i % 2]);
        }
        assert_ne!(r.labels[0], r.labels[1]);
    }

    #[test]
    fn center_cap_is_respected() {
        let pts = [-0.9, -0.9, 0.0, 0.0, 0.9, 0.9];
        let params = SubtractiveParams {
            ra: 0.2,
            max_centers: 2,
            ..Default::default()
        };
        assert_eq!(
            subtractive_clustering(&pts, 1, &params)
                .unwrap()
                .n_centers(),
            2
        );
        let uncapped = SubtractiveParams {
            max_centers: 0,
            ..params
        };
        assert_eq!(
            subtractive_clustering(&pts, 1, &uncapped)
                .unwrap()
                .n_centers(),
            3
        );
    }

    #[test]
    fn bad_parameters() {
        let bad = SubtractiveParams {
            ra: 0.0,
            ..Default::default()
        };
        assert!(subtractive_clustering(&[0.0], 1, &bad).is_err());
        let bad = SubtractiveParams {
            reject_ratio: 0.9,
            ..Default::default()
        };
        assert!(subtractive_clustering(&[0.0], 1, &bad).is_err());
        assert!(subtractive_clustering(&[], 1, &SubtractiveParams::default()).is_err());
    }
}
