//! The staged workflow behind the command line: synthesize, tune, extract, segment, compare.
//!
//! Every command takes a [`PipelineConfig`], reads its inputs, computes everything in memory and
//! only then writes its outputs, each through a temp-file rename. The effective configuration is
//! echoed as `config.toml` into every output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    label_agreement, segment, Method, SegmentInput, SegmentParams, Segmentation,
};
use crate::error::{Error, Result, StageExt};
use crate::exec::Execution;
use crate::features::{
    extract_features, feature_histograms, histograms_to_csv, intensity_histogram,
    one_based_to_indices, select_features, ExtractOptions, FeatureMap,
};
use crate::image_io::{
    load_gray, make_synthetic_benchmark_with_noise, write_gray, write_label_image, GrayImage,
    BENCH_NOISE,
};
use crate::io_util::{atomic_write, ensure_dir};
use crate::ip::{ip_tune_logged, write_tuning_log, IpConfig, TuneOutcome};
use crate::reservoir::{generate_reservoir, Reservoir};

pub const CONFIG_FILE: &str = "config.toml";
pub const RESERVOIR_INITIAL_FILE: &str = "reservoir_initial.json";
pub const RESERVOIR_TUNED_FILE: &str = "reservoir_tuned.json";
pub const TUNING_LOG_FILE: &str = "tuning_log.csv";
pub const FEATURES_FILE: &str = "features.bin";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const AGREEMENT_FILE: &str = "agreement.csv";
pub const BENCHMARK_FILE: &str = "benchmark.png";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReservoirConfig {
    pub n_r: usize,
    pub spectral_radius: f64,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            n_r: 10,
            spectral_radius: 0.9,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    /// One-based neurons kept by `extract`; all when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub select: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub bins: usize,
    /// Added to every value before binning.
    pub shift: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig {
            bins: 64,
            shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    /// One-based neurons for the selected-features cell.
    pub neurons: Vec<usize>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            neurons: vec![1, 3, 8],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 256,
            seed: 1,
            noise: BENCH_NOISE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reservoir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub reservoir: ReservoirConfig,
    pub ip: IpConfig,
    pub extraction: ExtractOptions,
    pub features: FeaturesConfig,
    pub clustering: SegmentParams,
    pub histogram: HistogramConfig,
    pub compare: CompareConfig,
    pub synth: SynthConfig,
    pub io: IoConfig,
    #[serde(skip)]
    pub execution: Execution,
}

impl PipelineConfig {
    /// Parses and validates a TOML document. Missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.into_inner().to_string();
            Error::Config(format!("field `{path}`: {}", msg.trim()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.reservoir.n_r == 0 {
            return Err(Error::param("reservoir.n_r", "must be at least 1"));
        }
        let rho = self.reservoir.spectral_radius;
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::param(
                "reservoir.spectral_radius",
                "must be positive",
            ));
        }
        self.ip.validate()?;
        self.extraction.validate()?;
        self.clustering.validate()?;
        if let Some(sel) = &self.features.select {
            check_neurons(sel, self.reservoir.n_r, "features.select")?;
        }
        check_neurons(&self.compare.neurons, self.reservoir.n_r, "compare.neurons")?;
        if self.histogram.bins < 2 {
            return Err(Error::param("histogram.bins", "must be at least 2"));
        }
        if !self.histogram.shift.is_finite() {
            return Err(Error::param("histogram.shift", "must be finite"));
        }
        if !(self.synth.noise.is_finite() && self.synth.noise >= 0.0) {
            return Err(Error::param("synth.noise", "must be non-negative"));
        }
        Ok(())
    }

    /// Copies of the extraction and clustering parameters carrying [`Self::execution`].
    pub fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            execution: self.execution,
            ..self.extraction
        }
    }

    pub fn segment_params(&self) -> SegmentParams {
        SegmentParams {
            execution: self.execution,
            ..self.clustering
        }
    }

    fn echo(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join(CONFIG_FILE), self.to_toml()?.as_bytes())
    }
}

fn check_neurons(list: &[usize], n_r: usize, field: &'static str) -> Result<()> {
    if list.is_empty() {
        return Err(Error::param(field, "must name at least one neuron"));
    }
    if let Some(&bad) = list.iter().find(|&&n| n == 0 || n > n_r) {
        return Err(Error::param(
            field,
            format!("neuron {bad} outside 1..={n_r} (neurons are numbered from 1)"),
        ));
    }
    Ok(())
}

/// Either kind of clustering input, as files.
#[derive(Debug, Clone)]
pub enum SegmentSource {
    Image(PathBuf),
    Features(PathBuf),
}

fn load_image(path: &Path) -> Result<GrayImage> {
    load_gray(path).stage("load image")
}

fn initial_reservoir(cfg: &PipelineConfig) -> Result<Reservoir> {
    let r = &cfg.reservoir;
    generate_reservoir(r.n_r, 1, r.spectral_radius, r.seed).stage("generate reservoir")
}

fn tune(cfg: &PipelineConfig, initial: &Reservoir, img: &GrayImage) -> Result<TuneOutcome> {
    ip_tune_logged(initial, img.intensities(), &cfg.ip).stage("tune")
}

fn extract(
    cfg: &PipelineConfig,
    res: &Reservoir,
    img: &GrayImage,
    select: Option<&[usize]>,
) -> Result<FeatureMap> {
    let fm = extract_features(res, img, &cfg.extract_options()).stage("extract")?;
    match select {
        Some(neurons) => {
            let idx = one_based_to_indices(neurons).stage("extract")?;
            select_features(&fm, &idx).stage("extract")
        }
        None => Ok(fm),
    }
}

pub fn cmd_synth(cfg: &PipelineConfig, out_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let s = &cfg.synth;
    let img =
        make_synthetic_benchmark_with_noise(s.width, s.height, s.seed, s.noise).stage("synth")?;
    ensure_dir(out_dir)?;
    let path = out_dir.join(BENCHMARK_FILE);
    write_gray(&img, &path).stage("synth")?;
    cfg.echo(out_dir)?;
    Ok(path)
}

/// Generates the seeded reservoir, tunes it on the image and writes both reservoirs and the log.
pub fn cmd_tune(cfg: &PipelineConfig, image: &Path, out_dir: &Path) -> Result<TuneOutcome> {
    cfg.validate()?;
    let img = load_image(image)?;
    let initial = initial_reservoir(cfg)?;
    let outcome = tune(cfg, &initial, &img)?;
    info!(
        "tuned {} neurons over {} pixels × {} epochs",
        initial.n_r(),
        img.intensities().len(),
        cfg.ip.n_ip
    );

    ensure_dir(out_dir)?;
    initial
        .save(&out_dir.join(RESERVOIR_INITIAL_FILE))
        .stage("tune")?;
    outcome
        .reservoir
        .save(&out_dir.join(RESERVOIR_TUNED_FILE))
        .stage("tune")?;
    write_tuning_log(&outcome.log, &out_dir.join(TUNING_LOG_FILE)).stage("tune")?;
    cfg.echo(out_dir)?;
    Ok(outcome)
}

/// Extracts equilibrium features, optionally keeping only the one-based `neurons`.
pub fn cmd_extract(
    cfg: &PipelineConfig,
    reservoir: &Path,
    image: &Path,
    neurons: Option<&[usize]>,
    out_dir: &Path,
) -> Result<FeatureMap> {
    cfg.validate()?;
    let res = Reservoir::load(reservoir).stage("load reservoir")?;
    let img = load_image(image)?;
    if let Some(n) = neurons {
        check_neurons(n, res.n_r(), "neurons")?;
    }
    let fm = extract(cfg, &res, &img, neurons)?;
    let hists =
        feature_histograms(&fm, cfg.histogram.bins, cfg.histogram.shift).stage("histogram")?;

    ensure_dir(out_dir)?;
    fm.save(&out_dir.join(FEATURES_FILE)).stage("extract")?;
    atomic_write(
        &out_dir.join(HISTOGRAMS_FILE),
        histograms_to_csv(&hists).as_bytes(),
    )?;
    cfg.echo(out_dir)?;
    Ok(fm)
}

pub fn label_file_name(method: Method) -> String {
    format!("labels_{method}.png")
}

/// Clusters a feature file or an image and writes `labels_<method>.png` plus a one-row summary.
pub fn cmd_segment(
    cfg: &PipelineConfig,
    source: &SegmentSource,
    out_dir: &Path,
) -> Result<Segmentation> {
    cfg.validate()?;
    let params = cfg.segment_params();
    let seg = match source {
        SegmentSource::Image(p) => {
            let img = load_image(p)?;
            segment(SegmentInput::Image(&img), &params)
        }
        SegmentSource::Features(p) => {
            let fm = FeatureMap::load(p).stage("load features")?;
            segment(SegmentInput::Features(&fm), &params)
        }
    }
    .stage("segment")?;

    ensure_dir(out_dir)?;
    write_label_image(&seg, &out_dir.join(label_file_name(seg.method))).stage("segment")?;
    let mut csv = String::from(SEGMENT_SUMMARY_HEADER);
    csv.push('\n');
    csv.push_str(&summary_row(&seg));
    csv.push('\n');
    atomic_write(&out_dir.join(SUMMARY_FILE), csv.as_bytes())?;
    cfg.echo(out_dir)?;
    Ok(seg)
}

const SEGMENT_SUMMARY_HEADER: &str = "method,k,nonempty,sse,thresholds,counts";

/// List-valued fields are joined with `;` so the row stays comma separated.
fn summary_row(seg: &Segmentation) -> String {
    let counts = seg.label_counts();
    let nonempty = counts.iter().filter(|&&c| c > 0).count();
    let sse = seg.sse.map(|s| s.to_string()).unwrap_or_default();
    let thresholds = seg
        .thresholds
        .as_ref()
        .map(|t| join(t.iter()))
        .unwrap_or_default();
    format!(
        "{},{},{nonempty},{sse},{thresholds},{}",
        seg.method,
        seg.k,
        join(counts.iter())
    )
}

fn join<T: ToString>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Histogram CSVs for a feature file or for an image's intensities.
pub fn cmd_histogram(
    cfg: &PipelineConfig,
    source: &SegmentSource,
    out_dir: &Path,
) -> Result<PathBuf> {
    cfg.validate()?;
    let h = &cfg.histogram;
    let (name, csv) = match source {
        SegmentSource::Features(p) => {
            let fm = FeatureMap::load(p).stage("load features")?;
            let hists = feature_histograms(&fm, h.bins, h.shift).stage("histogram")?;
            (HISTOGRAMS_FILE, histograms_to_csv(&hists))
        }
        SegmentSource::Image(p) => {
            let img = load_image(p)?;
            let hist = intensity_histogram(&img, h.bins, h.shift).stage("histogram")?;
            ("intensity_histogram.csv", hist.to_csv())
        }
    };
    ensure_dir(out_dir)?;
    let path = out_dir.join(name);
    atomic_write(&path, csv.as_bytes())?;
    cfg.echo(out_dir)?;
    Ok(path)
}

/// Tune, extract and segment in one process, with no intermediate files.
pub fn run_pipeline(cfg: &PipelineConfig, img: &GrayImage) -> Result<Segmentation> {
    cfg.validate()?;
    let initial = initial_reservoir(cfg)?;
    let tuned = tune(cfg, &initial, img)?.reservoir;
    let fm = extract(cfg, &tuned, img, cfg.features.select.as_deref())?;
    segment(SegmentInput::Features(&fm), &cfg.segment_params()).stage("segment")
}

/// Which pixels representation a comparison cell clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellInput {
    Intensity,
    InitialFeatures,
    TunedFeatures,
    TunedSelected,
}

impl CellInput {
    pub fn name(self) -> &'static str {
        match self {
            CellInput::Intensity => "intensity",
            CellInput::InitialFeatures => "initial_all",
            CellInput::TunedFeatures => "tuned_all",
            CellInput::TunedSelected => "tuned_selected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub input: CellInput,
    pub method: Method,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}_{}", self.input.name(), self.method)
    }
}

/// Intensities under every method, then each feature set under k-means.
pub fn comparison_cells() -> Vec<Cell> {
    let mut cells: Vec<Cell> = Method::ALL
        .into_iter()
        .map(|method| Cell {
            input: CellInput::Intensity,
            method,
        })
        .collect();
    for input in [
        CellInput::InitialFeatures,
        CellInput::TunedFeatures,
        CellInput::TunedSelected,
    ] {
        cells.push(Cell {
            input,
            method: Method::Kmeans,
        });
    }
    cells
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: Result<Segmentation>,
}

#[derive(Debug)]
pub struct CompareReport {
    pub cells: Vec<CellOutcome>,
    /// Row-major square matrix over `cells`; `None` where either cell failed.
    pub agreement: Vec<Option<f64>>,
}

impl CompareReport {
    pub fn failures(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| c.result.is_err())
    }

    pub fn agreement_between(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.cells.iter().position(|c| c.cell.name() == a)?;
        let j = self.cells.iter().position(|c| c.cell.name() == b)?;
        self.agreement[i * self.cells.len() + j]
    }
}

/// Runs the whole comparison matrix on one image. A failing cell is recorded in the report and
/// in `summary.csv`; the other cells still run and write their label images.
pub fn cmd_compare(cfg: &PipelineConfig, image: &Path, out_dir: &Path) -> Result<CompareReport> {
    cfg.validate()?;
    let img = load_image(image)?;
    let report = compare_image(cfg, &img);

    ensure_dir(out_dir)?;
    for outcome in &report.cells {
        if let Ok(seg) = &outcome.result {
            write_label_image(seg, &out_dir.join(format!("{}.png", outcome.cell.name())))
                .stage("compare")?;
        }
    }
    atomic_write(
        &out_dir.join(SUMMARY_FILE),
        compare_summary_csv(&report).as_bytes(),
    )?;
    atomic_write(
        &out_dir.join(AGREEMENT_FILE),
        agreement_csv(&report).as_bytes(),
    )?;
    cfg.echo(out_dir)?;
    Ok(report)
}

/// The in-memory part of [`cmd_compare`].
pub fn compare_image(cfg: &PipelineConfig, img: &GrayImage) -> CompareReport {
    let params = cfg.segment_params();
    let initial = initial_reservoir(cfg);
    let tuned = initial
        .as_ref()
        .map_err(clone_err)
        .and_then(|r| tune(cfg, r, img).map(|t| t.reservoir));
    let inputs = [CellInput::InitialFeatures, CellInput::TunedFeatures];
    let feature_sets = cfg.execution.map(&inputs, |input| {
        let res = match input {
            CellInput::InitialFeatures => initial.as_ref(),
            _ => tuned.as_ref(),
        }
        .map_err(clone_err)?;
        extract(cfg, res, img, None)
    });
    let selected = feature_sets[1].as_ref().map_err(clone_err).and_then(|fm| {
        let idx = one_based_to_indices(&cfg.compare.neurons)?;
        select_features(fm, &idx)
    });

    let cells = comparison_cells();
    let results = cfg.execution.map(&cells, |cell| {
        let p = SegmentParams {
            method: cell.method,
            ..params
        };
        let fm = match cell.input {
            CellInput::Intensity => return segment(SegmentInput::Image(img), &p),
            CellInput::InitialFeatures => &feature_sets[0],
            CellInput::TunedFeatures => &feature_sets[1],
            CellInput::TunedSelected => &selected,
        };
        segment(SegmentInput::Features(fm.as_ref().map_err(clone_err)?), &p)
    });
    let cells: Vec<CellOutcome> = cells
        .into_iter()
        .zip(results)
        .map(|(cell, result)| CellOutcome {
            cell,
            result: result.stage("compare"),
        })
        .collect();

    let n = cells.len();
    let agreement = cfg.execution.map_range(n * n, |ij| {
        let (a, b) = (&cells[ij / n].result, &cells[ij % n].result);
        match (a, b) {
            (Ok(a), Ok(b)) => label_agreement(&a.labels, &b.labels).ok(),
            _ => None,
        }
    });
    CompareReport { cells, agreement }
}

/// Errors are not `Clone`; shared upstream failures are re-reported per cell by message.
fn clone_err(e: &Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::InvalidParameter {
            name,
            reason: reason.clone(),
        },
        Error::Dimension(m) => Error::Dimension(m.clone()),
        Error::Numerical(m) => Error::Numerical(m.clone()),
        Error::Config(m) => Error::Config(m.clone()),
        Error::Stage { stage, source } => Error::Stage {
            stage,
            source: Box::new(clone_err(source)),
        },
        other => Error::InvalidData(other.to_string()),
    }
}

fn compare_summary_csv(report: &CompareReport) -> String {
    let mut out = format!("cell,status,{SEGMENT_SUMMARY_HEADER},error\n");
    for c in &report.cells {
        match &c.result {
            Ok(seg) => writeln!(out, "{},ok,{},", c.cell.name(), summary_row(seg)).unwrap(),
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], " ");
                writeln!(out, "{},failed,{},,,,,,{msg}", c.cell.name(), c.cell.method).unwrap()
            }
        }
    }
    out
}

fn agreement_csv(report: &CompareReport) -> String {
    let names: Vec<String> = report.cells.iter().map(|c| c.cell.name()).collect();
    let mut out = format!("cell,{}\n", names.join(","));
    for (i, name) in names.iter().enumerate() {
        out.push_str(name);
        for j in 0..names.len() {
            match report.agreement[i * names.len() + j] {
                Some(a) => write!(out, ",{a}").unwrap(),
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
    }
    out
}
