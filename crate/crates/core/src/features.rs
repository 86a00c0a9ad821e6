//! Per-pixel feature vectors taken from reservoir equilibrium states.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::image_io::GrayImage;
use crate::io_util::atomic_write;
use crate::reservoir::Reservoir;

/// File magic of the binary feature map format.
pub const FEATURE_MAGIC: [u8; 4] = *b"ESNF";

const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    n_features: usize,
    /// Pixel-major: `data[p * n_features + j]` is feature `j` of pixel `p`.
    data: Vec<f64>,
    /// Share of pixels whose settling met the tolerance; unknown for maps read from disk.
    converged_fraction: Option<f64>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, n_features: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || n_features == 0 {
            return Err(Error::Dimension(
                "feature map dimensions must be positive".into(),
            ));
        }
        if data.len() != width * height * n_features {
            return Err(Error::Dimension(format!(
                "{width}×{height}×{n_features} feature map needs {} values, got {}",
                width * height * n_features,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "feature map has non-finite values".into(),
            ));
        }
        Ok(FeatureMap {
            width,
            height,
            n_features,
            data,
            converged_fraction: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn converged_fraction(&self) -> Option<f64> {
        self.converged_fraction
    }

    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.n_features..(p + 1) * self.n_features]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.n_features).copied()
    }

    /// Serializes to the binary format: magic, then width, height and feature count as
    /// little-endian `u32`, then the values as little-endian `f64`, pixel-major.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = [self.width, self.height, self.n_features];
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        out.extend_from_slice(&FEATURE_MAGIC);
        for d in dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::Dimension(format!("dimension {d} does not fit in u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || bytes[..4] != FEATURE_MAGIC {
            return Err(Error::InvalidData(
                "not a feature map file (bad magic)".into(),
            ));
        }
        let word =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (width, height, n_features) = (word(0), word(1), word(2));
        let expected = width
            .checked_mul(height)
            .and_then(|x| x.checked_mul(n_features))
            .and_then(|x| x.checked_mul(8))
            .ok_or_else(|| Error::InvalidData("feature map header overflows".into()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != expected {
            return Err(Error::InvalidData(format!(
                "feature map body has {} bytes, header implies {expected}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMap::new(width, height, n_features, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        FeatureMap::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractOptions {
    pub n_it: usize,
    pub tol: f64,
    /// Settle each distinct intensity once and share the result.
    pub memoize: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            n_it: 50,
            tol: 1e-6,
            memoize: true,
            execution: Execution::default(),
        }
    }
}

impl ExtractOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_it == 0 {
            return Err(Error::param("extraction.n_it", "must be at least 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::param("extraction.tol", "must be positive"));
        }
        Ok(())
    }
}

/// Feature vector of every pixel: the reservoir state reached from zero under the constant input
/// equal to the pixel's intensity.
pub fn extract_features(
    res: &Reservoir,
    img: &GrayImage,
    opts: &ExtractOptions,
) -> Result<FeatureMap> {
    opts.validate()?;
    if res.input_dim() != 1 {
        return Err(Error::Dimension(format!(
            "gray images need a reservoir with input_dim 1, got {}",
            res.input_dim()
        )));
    }
    let pixels = img.intensities();
    if let Some(p) = pixels.iter().find(|p| !(-1.0..=1.0).contains(*p)) {
        return Err(Error::InvalidData(format!("intensity {p} outside [-1, 1]")));
    }
    let n_r = res.n_r();
    let settle = |u: &f64| {
        res.settle(&[*u], opts.n_it, opts.tol)
            .expect("dimensions and options checked above")
    };

    let mut data = Vec::with_capacity(pixels.len() * n_r);
    let converged = if opts.memoize {
        let mut slot_of: HashMap<u64, usize> = HashMap::new();
        let mut unique = Vec::new();
        let slots: Vec<usize> = pixels
            .iter()
            .map(|&p| {
                *slot_of.entry(p.to_bits()).or_insert_with(|| {
                    unique.push(p);
                    unique.len() - 1
                })
            })
            .collect();
        let settled = opts.execution.map(&unique, settle);
        for &s in &slots {
            data.extend_from_slice(&settled[s].state);
        }
        slots.iter().filter(|&&s| settled[s].converged).count()
    } else {
        let settled = opts.execution.map(pixels, settle);
        for s in &settled {
            data.extend_from_slice(&s.state);
        }
        settled.iter().filter(|s| s.converged).count()
    };

    let mut fm = FeatureMap::new(img.width(), img.height(), n_r, data)?;
    fm.converged_fraction = Some(converged as f64 / pixels.len() as f64);
    Ok(fm)
}

/// Keeps only the listed feature columns, in the given order. Indices are zero-based.
pub fn select_features(fm: &FeatureMap, indices: &[usize]) -> Result<FeatureMap> {
    if indices.is_empty() {
        return Err(Error::param("neurons", "selection is empty"));
    }
    for (pos, &i) in indices.iter().enumerate() {
        if i >= fm.n_features {
            return Err(Error::param(
                "neurons",
                format!("index {i} out of range for {} features", fm.n_features),
            ));
        }
        if indices[..pos].contains(&i) {
            return Err(Error::param("neurons", format!("index {i} selected twice")));
        }
    }
    let mut data = Vec::with_capacity(fm.n_pixels() * indices.len());
    for p in 0..fm.n_pixels() {
        let row = fm.pixel(p);
        data.extend(indices.iter().map(|&i| row[i]));
    }
    let mut out = FeatureMap::new(fm.width, fm.height, indices.len(), data)?;
    out.converged_fraction = fm.converged_fraction;
    Ok(out)
}

/// Converts one-based neuron labels (as used on the command line) to zero-based indices.
pub fn one_based_to_indices(labels: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            l.checked_sub(1).ok_or_else(|| {
                Error::param("neurons", "neuron labels are one-based; 0 is not valid")
            })
        })
        .collect()
}

/// Bin of `x` among `bins` equal-width bins on `[lo, hi]`; values outside land in the edge bins.
#[inline]
pub fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = (x - lo) / (hi - lo) * bins as f64;
    if t.is_nan() || t < 0.0 {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

/// Equal-width histogram over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_values(
        values: impl IntoIterator<Item = f64>,
        bins: usize,
        shift: f64,
    ) -> Result<Self> {
        if bins < 2 {
            return Err(Error::param("histogram.bins", "must be at least 2"));
        }
        let mut counts = vec![0u64; bins];
        for v in values {
            counts[bin_index(v + shift, -1.0, 1.0, bins)] += 1;
        }
        Ok(Histogram { counts })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// `(left, right)` edges of bin `j`.
    pub fn edges(&self, j: usize) -> (f64, f64) {
        let w = 2.0 / self.bins() as f64;
        (-1.0 + j as f64 * w, -1.0 + (j + 1) as f64 * w)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Distance between the outer edges of the first and last nonempty bins.
    pub fn support_width(&self) -> f64 {
        let first = self.counts.iter().position(|&c| c > 0);
        let last = self.counts.iter().rposition(|&c| c > 0);
        match (first, last) {
            (Some(a), Some(b)) => self.edges(b).1 - self.edges(a).0,
            _ => 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for (j, c) in self.counts.iter().enumerate() {
            let (l, r) = self.edges(j);
            writeln!(out, "{l},{r},{c}").unwrap();
        }
        out
    }
}

/// One histogram per feature column, over `[-1, 1]` after adding `shift` to each value.
pub fn feature_histograms(fm: &FeatureMap, bins: usize, shift: f64) -> Result<Vec<Histogram>> {
    (0..fm.n_features)
        .map(|j| Histogram::from_values(fm.column(j), bins, shift))
        .collect()
}

pub fn intensity_histogram(img: &GrayImage, bins: usize, shift: f64) -> Result<Histogram> {
    Histogram::from_values(img.intensities().iter().copied(), bins, shift)
}

/// CSV with columns `neuron,bin_left,bin_right,count`; neurons are zero-based.
pub fn histograms_to_csv(hists: &[Histogram]) -> String {
    let mut out = String::from("neuron,bin_left,bin_right,count\n");
    for (n, h) in hists.iter().enumerate() {
        for (j, c) in h.counts.iter().enumerate() {
            let (l, r) = h.edges(j);
            writeln!(out, "{n},{l},{r},{c}").unwrap();
        }
    }
    out
}
