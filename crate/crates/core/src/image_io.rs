//! Gray image loading, intensity scaling to `[-1, 1]`, label-image output and the synthetic
//! benchmark image.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clustering::Segmentation;
use crate::error::{Error, Result};
use crate::io_util::atomic_write;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    intensities: Vec<f64>,
    source_depth: u8,
}

impl GrayImage {
    pub fn new(
        width: usize,
        height: usize,
        intensities: Vec<f64>,
        source_depth: u8,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension("image dimensions must be positive".into()));
        }
        if intensities.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}×{height} image needs {} intensities, got {}",
                width * height,
                intensities.len()
            )));
        }
        if let Some(v) = intensities.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidData(format!("intensity {v} outside [-1, 1]")));
        }
        Ok(GrayImage {
            width,
            height,
            intensities,
            source_depth,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Raster-order intensities in `[-1, 1]`.
    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn source_depth(&self) -> u8 {
        self.source_depth
    }

    /// Sub-rectangle `[x0, x0 + w) × [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<GrayImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Dimension(format!(
                "crop {w}×{h} at ({x0}, {y0}) exceeds {}×{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.intensities[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayImage::new(w, h, data, self.source_depth)
    }

    /// Intensities quantized back to 8-bit levels.
    pub fn to_levels(&self) -> Vec<u8> {
        self.intensities
            .iter()
            .map(|&x| intensity_to_level(x))
            .collect()
    }
}

/// Maps a channel value `v ∈ [0, max]` linearly onto `[-1, 1]`.
#[inline]
pub fn scale_intensity(v: f64, max: f64) -> f64 {
    2.0 * (v / max) - 1.0
}

/// Inverse of [`scale_intensity`] for 8-bit data.
#[inline]
pub fn intensity_to_level(x: f64) -> u8 {
    (255.0 * (x + 1.0) / 2.0).round().clamp(0.0, 255.0) as u8
}

/// BT.601 luma in source units, computed as an exact integer weighted sum divided by 1000 so that
/// equal channels give back the channel value.
#[inline]
fn luma(r: u32, g: u32, b: u32) -> f64 {
    (299 * r as u64 + 587 * g as u64 + 114 * b as u64) as f64 / 1000.0
}

fn format_name(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_uppercase())
        .unwrap_or_else(|| "unknown".into())
}

fn output_format(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Image {
            format: format_name(path),
            path: path.to_path_buf(),
            message: "unsupported output format (use .png or .pgm)".into(),
        }),
    }
}

/// Loads a PNG or binary PGM and scales it to `[-1, 1]`. Colour is reduced with BT.601 luma,
/// alpha is ignored.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let format = reader
        .format()
        .map(|f| format!("{f:?}").to_ascii_uppercase())
        .unwrap_or_else(|| format_name(path));
    if !matches!(
        reader.format(),
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm)
    ) {
        return Err(Error::Image {
            format,
            path: path.to_path_buf(),
            message: "unsupported format (expected PNG or PGM)".into(),
        });
    }
    let img = reader.decode().map_err(|e| Error::Image {
        format: format.clone(),
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    from_dynamic(&img)
}

/// Converts a decoded image to scaled gray intensities.
pub fn from_dynamic(img: &DynamicImage) -> Result<GrayImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (data, depth): (Vec<f64>, u8) = match img {
        DynamicImage::ImageLuma8(b) => (
            b.pixels()
                .map(|p| scale_intensity(p[0] as f64, 255.0))
                .collect(),
            8,
        ),
        DynamicImage::ImageLumaA8(b) => (
            b.pixels()
                .map(|p| scale_intensity(p[0] as f64, 255.0))
                .collect(),
            8,
        ),
        DynamicImage::ImageLuma16(b) => (
            b.pixels()
                .map(|p| scale_intensity(p[0] as f64, 65535.0))
                .collect(),
            16,
        ),
        DynamicImage::ImageLumaA16(b) => (
            b.pixels()
                .map(|p| scale_intensity(p[0] as f64, 65535.0))
                .collect(),
            16,
        ),
        DynamicImage::ImageRgb8(b) => (
            b.pixels()
                .map(|p| scale_intensity(luma(p[0] as u32, p[1] as u32, p[2] as u32), 255.0))
                .collect(),
            8,
        ),
        DynamicImage::ImageRgba8(b) => (
            b.pixels()
                .map(|p| scale_intensity(luma(p[0] as u32, p[1] as u32, p[2] as u32), 255.0))
                .collect(),
            8,
        ),
        other => {
            let rgb = other.to_rgb16();
            (
                rgb.pixels()
                    .map(|p| scale_intensity(luma(p[0] as u32, p[1] as u32, p[2] as u32), 65535.0))
                    .collect(),
                16,
            )
        }
    };
    GrayImage::new(w, h, data, depth)
}

/// Writes 8-bit gray levels as PNG or PGM, chosen by extension.
pub fn write_levels(levels: &[u8], width: usize, height: usize, path: &Path) -> Result<()> {
    let format = output_format(path)?;
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, levels.to_vec()).ok_or_else(|| {
            Error::Dimension(format!(
                "{} levels for a {width}×{height} image",
                levels.len()
            ))
        })?;
    let mut bytes = Vec::new();
    DynamicImage::ImageLuma8(buf)
        .write_to(&mut Cursor::new(&mut bytes), format)
        .map_err(|e| Error::Image {
            format: format_name(path),
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    atomic_write(path, &bytes)
}

/// Writes an image quantized to 8 bits.
pub fn write_gray(img: &GrayImage, path: &Path) -> Result<()> {
    write_levels(&img.to_levels(), img.width, img.height, path)
}

/// Gray level used for label `label` out of `k`: `round(255·label/(k−1))`, or 0 when `k = 1`.
#[inline]
pub fn label_level(label: usize, k: usize) -> u8 {
    if k <= 1 {
        0
    } else {
        (255.0 * label as f64 / (k - 1) as f64).round() as u8
    }
}

/// Recovers a label from a gray level written by [`write_label_image`].
#[inline]
pub fn level_to_label(level: u8, k: usize) -> usize {
    if k <= 1 {
        0
    } else {
        (level as f64 * (k - 1) as f64 / 255.0).round() as usize
    }
}

pub fn write_label_image(seg: &Segmentation, path: &Path) -> Result<()> {
    let levels: Vec<u8> = seg.labels.iter().map(|&l| label_level(l, seg.k)).collect();
    write_levels(&levels, seg.width, seg.height, path)
}

/// Gray level of the background gradient at the left edge.
pub const BENCH_BACKGROUND_LEFT: u8 = 44;
/// Gray level of the background gradient at the right edge.
pub const BENCH_BACKGROUND_RIGHT: u8 = 60;
/// Gray level of the filled disk.
pub const BENCH_DISK_LEVEL: u8 = 128;
/// Gray level of the filled rectangle.
pub const BENCH_RECT_LEVEL: u8 = 208;
/// Default noise amplitude in scaled intensity units.
pub const BENCH_NOISE: f64 = 0.05;

/// Histogram modes of the benchmark, in scaled intensity: background centre, disk, rectangle.
pub fn benchmark_modes() -> [f64; 3] {
    let bg = (BENCH_BACKGROUND_LEFT as f64 + BENCH_BACKGROUND_RIGHT as f64) / 2.0;
    [
        scale_intensity(bg, 255.0),
        scale_intensity(BENCH_DISK_LEVEL as f64, 255.0),
        scale_intensity(BENCH_RECT_LEVEL as f64, 255.0),
    ]
}

/// Which benchmark region a pixel belongs to: 0 background, 1 disk, 2 rectangle.
pub fn benchmark_region(x: usize, y: usize, width: usize, height: usize) -> u8 {
    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
    let (w, h) = (width as f64, height as f64);
    let (cx, cy, radius) = (0.32 * w, 0.55 * h, 0.24 * w.min(h));
    if (fx - cx).powi(2) + (fy - cy).powi(2) <= radius * radius {
        return 1;
    }
    if fx >= 0.62 * w && fx < 0.92 * w && fy >= 0.12 * h && fy < 0.78 * h {
        return 2;
    }
    0
}

/// Noise-free gray level of pixel `(x, y)`.
pub fn benchmark_level(x: usize, y: usize, width: usize, height: usize) -> u8 {
    match benchmark_region(x, y, width, height) {
        1 => BENCH_DISK_LEVEL,
        2 => BENCH_RECT_LEVEL,
        _ => {
            let span = (BENCH_BACKGROUND_RIGHT - BENCH_BACKGROUND_LEFT) as f64;
            let t = x as f64 / (width - 1) as f64;
            BENCH_BACKGROUND_LEFT + (span * t).round() as u8
        }
    }
}

/// Synthetic three-region test image used in place of a photographic benchmark.
///
/// Background is a shallow horizontal gradient, with a disk and a rectangle filled at distinct
/// levels, plus uniform noise of amplitude [`BENCH_NOISE`]. Values are quantized to 8-bit levels.
pub fn make_synthetic_benchmark(width: usize, height: usize, seed: u64) -> Result<GrayImage> {
    make_synthetic_benchmark_with_noise(width, height, seed, BENCH_NOISE)
}

pub fn make_synthetic_benchmark_with_noise(
    width: usize,
    height: usize,
    seed: u64,
    noise: f64,
) -> Result<GrayImage> {
    if width < 16 || height < 16 {
        return Err(Error::param(
            "width/height",
            "benchmark needs at least 16×16 pixels",
        ));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::param("noise", "must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let base = scale_intensity(benchmark_level(x, y, width, height) as f64, 255.0);
            let v = if noise > 0.0 {
                base + rng.random_range(-noise..=noise)
            } else {
                base
            };
            let level = intensity_to_level(v.clamp(-1.0, 1.0));
            data.push(scale_intensity(level as f64, 255.0));
        }
    }
    GrayImage::new(width, height, data, 8)
}
