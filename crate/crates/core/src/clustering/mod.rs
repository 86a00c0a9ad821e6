//! Pixel clustering: k-means, fuzzy c-means, subtractive clustering, hard thresholding and
//! multi-level Otsu, behind a single [`segment`] entry point.

pub mod fcm;
pub mod kmeans;
pub mod subtractive;
pub mod threshold;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fcm::{fuzzy_cmeans, initial_memberships, FcmParams, FcmResult};
pub use kmeans::{kmeans, kmeans_once, KMeansParams, KMeansResult};
pub use subtractive::{subtractive_clustering, SubtractiveParams, SubtractiveResult};
pub use threshold::{hard_threshold, hard_thresholds, otsu_multilevel, OtsuResult};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::features::FeatureMap;
use crate::image_io::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kmeans,
    Fcm,
    Subtractive,
    HardThreshold,
    Otsu,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::HardThreshold,
        Method::Otsu,
        Method::Fcm,
        Method::Subtractive,
        Method::Kmeans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kmeans => "kmeans",
            Method::Fcm => "fcm",
            Method::Subtractive => "subtractive",
            Method::HardThreshold => "hard_threshold",
            Method::Otsu => "otsu",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::param(
                    "method",
                    format!("unknown method `{s}` (expected kmeans, fcm, subtractive, hard_threshold or otsu)"),
                )
            })
    }
}

/// Everything [`segment`] needs; also the `[clustering]` section of the pipeline config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentParams {
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub fcm_m: f64,
    pub otsu_bins: usize,
    pub subtractive: SubtractiveParams,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            method: Method::Kmeans,
            k: 3,
            seed: 42,
            max_iter: 300,
            tol: 1e-9,
            restarts: 10,
            fcm_m: 2.0,
            otsu_bins: 256,
            subtractive: SubtractiveParams::default(),
            execution: Execution::default(),
        }
    }
}

impl SegmentParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("clustering.k", "must be at least 1"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("clustering.max_iter", "must be at least 1"));
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::param("clustering.tol", "must be non-negative"));
        }
        if self.restarts == 0 {
            return Err(Error::param("clustering.restarts", "must be at least 1"));
        }
        if !(self.fcm_m.is_finite() && self.fcm_m > 1.0) {
            return Err(Error::param("clustering.fcm_m", "fuzzifier must exceed 1"));
        }
        if self.otsu_bins < 2 {
            return Err(Error::param("clustering.otsu_bins", "must be at least 2"));
        }
        self.subtractive.validate()
    }
}

/// What to cluster: raw intensities or per-pixel feature vectors.
#[derive(Debug, Clone, Copy)]
pub enum SegmentInput<'a> {
    Image(&'a GrayImage),
    Features(&'a FeatureMap),
}

impl<'a> SegmentInput<'a> {
    fn dims(&self) -> (usize, usize, usize, &'a [f64]) {
        match *self {
            SegmentInput::Image(img) => (img.width(), img.height(), 1, img.intensities()),
            SegmentInput::Features(fm) => (fm.width(), fm.height(), fm.n_features(), fm.data()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    /// Number of classes. For subtractive clustering, the number of centres found.
    pub k: usize,
    pub labels: Vec<usize>,
    /// Dimension of the clustered points.
    pub dim: usize,
    /// `k × dim` cluster centres, for the centroid-based methods.
    pub centroids: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
    pub sse: Option<f64>,
    pub method: Method,
    pub params: SegmentParams,
}

impl Segmentation {
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }
}

/// Flattens pixels to points, runs the chosen method and returns per-pixel labels.
pub fn segment(input: SegmentInput<'_>, params: &SegmentParams) -> Result<Segmentation> {
    params.validate()?;
    let (width, height, dim, points) = input.dims();
    let scalar_only = |what: &str| -> Result<()> {
        if dim != 1 {
            return Err(Error::Dimension(format!(
                "{what} works on scalar intensities, got {dim}-dimensional features"
            )));
        }
        Ok(())
    };

    let mut seg = Segmentation {
        width,
        height,
        k: params.k,
        labels: Vec::new(),
        dim,
        centroids: None,
        thresholds: None,
        sse: None,
        method: params.method,
        params: *params,
    };
    match params.method {
        Method::Kmeans => {
            let r = kmeans(
                points,
                dim,
                &KMeansParams {
                    k: params.k,
                    seed: params.seed,
                    max_iter: params.max_iter,
                    tol: params.tol,
                    restarts: params.restarts,
                    execution: params.execution,
                },
            )?;
            seg.labels = r.labels;
            seg.centroids = Some(r.centroids);
            seg.sse = Some(r.sse);
        }
        Method::Fcm => {
            let r = fuzzy_cmeans(
                points,
                dim,
                &FcmParams {
                    k: params.k,
                    m: params.fcm_m,
                    seed: params.seed,
                    max_iter: params.max_iter,
                    tol: params.tol,
                    execution: params.execution,
                },
            )?;
            seg.labels = r.labels;
            seg.centroids = Some(r.centroids);
        }
        Method::Subtractive => {
            let sp = SubtractiveParams {
                max_centers: params.k,
                ..params.subtractive
            };
            let r = subtractive_clustering(points, dim, &sp)?;
            seg.k = r.n_centers();
            seg.labels = r.labels;
            seg.centroids = Some(r.centers);
        }
        Method::HardThreshold => {
            scalar_only("hard thresholding")?;
            seg.labels = hard_threshold(points, params.k, -1.0, 1.0)?;
            seg.thresholds = Some(hard_thresholds(params.k, -1.0, 1.0));
        }
        Method::Otsu => {
            scalar_only("Otsu thresholding")?;
            let r = otsu_multilevel(points, params.k, params.otsu_bins)?;
            seg.labels = r.labels;
            seg.thresholds = Some(r.thresholds);
        }
    }
    Ok(seg)
}

/// Largest label count [`label_agreement`] will permute over.
pub const AGREEMENT_MAX_K: usize = 8;

/// Fraction of positions where `a` and `b` agree after relabelling `b` by the permutation that
/// maximizes agreement.
pub fn label_agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "label vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidData("empty label vectors".into()));
    }
    let k = a.iter().chain(b).max().unwrap() + 1;
    if k > AGREEMENT_MAX_K {
        return Err(Error::param(
            "k",
            format!("label agreement supports at most {AGREEMENT_MAX_K} labels, got {k}"),
        ));
    }
    let mut table = vec![0usize; k * k];
    for (&x, &y) in a.iter().zip(b) {
        table[x * k + y] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits: usize = (0..k).map(|i| table[i * k + p[i]]).sum();
        best = best.max(hits);
    });
    Ok(best as f64 / a.len() as f64)
}

fn permute(p: &mut [usize], at: usize, visit: &mut impl FnMut(&[usize])) {
    if at == p.len() {
        visit(p);
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permute(p, at + 1, visit);
        p.swap(at, i);
    }
}

pub(crate) fn check_points(points: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 {
        return Err(Error::Dimension("point dimension must be positive".into()));
    }
    if points.is_empty() || !points.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!(
            "{} coordinates do not form {dim}-dimensional points",
            points.len()
        )));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidData(
            "points contain non-finite values".into(),
        ));
    }
    Ok(points.len() / dim)
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
