//! `esn-segment`: staged gray image segmentation from the command line.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use esn_segment::clustering::Method;
use esn_segment::pipeline::{self, PipelineConfig, SegmentSource};
use esn_segment::{Error, ErrorClass, Execution};

#[derive(Debug, Parser)]
#[command(
    name = "esn-segment",
    version,
    about = "Gray image segmentation with echo state network features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Seed for the reservoir and clustering (for `synth`, the noise seed).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[arg(long, global = true, value_name = "PATH")]
    image: Option<PathBuf>,

    #[arg(long, global = true, value_name = "PATH")]
    reservoir: Option<PathBuf>,

    #[arg(long, global = true, value_name = "PATH")]
    features: Option<PathBuf>,

    /// kmeans, fcm, subtractive, hard_threshold or otsu.
    #[arg(long, global = true, value_name = "NAME")]
    method: Option<String>,

    #[arg(long, global = true, value_name = "N")]
    k: Option<usize>,

    /// Comma separated neuron numbers, counting from 1.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    neurons: Option<Vec<usize>>,

    /// Histogram bin count.
    #[arg(long, global = true, value_name = "N")]
    bins: Option<usize>,

    /// Added to every value before histogram binning.
    #[arg(long, global = true, value_name = "X", allow_negative_numbers = true)]
    shift: Option<f64>,

    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Run on the current thread only.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate the seeded reservoir and tune it on --image.
    Tune,
    /// Extract equilibrium features of --image through --reservoir.
    Extract,
    /// Cluster --features, or the intensities of --image.
    Segment,
    /// Run every method on --image and compare the label maps.
    Compare,
    /// Write the synthetic three-region benchmark image.
    Synth,
    /// Histogram --features, or the intensities of --image.
    Histogram,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage));
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> ExitCode {
    ExitCode::from(match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    })
}

fn effective_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        if matches!(cli.command, Command::Synth) {
            cfg.synth.seed = seed;
        } else {
            cfg.reservoir.seed = seed;
            cfg.clustering.seed = seed;
        }
    }
    if let Some(m) = &cli.method {
        cfg.clustering.method = m.parse::<Method>()?;
    }
    if let Some(k) = cli.k {
        cfg.clustering.k = k;
    }
    if let Some(n) = &cli.neurons {
        match cli.command {
            Command::Compare => cfg.compare.neurons = n.clone(),
            _ => cfg.features.select = Some(n.clone()),
        }
    }
    if let Some(b) = cli.bins {
        cfg.histogram.bins = b;
    }
    if let Some(s) = cli.shift {
        cfg.histogram.shift = s;
    }
    let io = &mut cfg.io;
    for (flag, slot) in [
        (&cli.image, &mut io.image),
        (&cli.reservoir, &mut io.reservoir),
        (&cli.features, &mut io.features),
        (&cli.out, &mut io.out),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if cli.sequential {
        cfg.execution = Execution::Sequential;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &'static str) -> Result<&'a Path, Error> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("missing --{flag} (or io.{flag} in the config)")))
}

/// Features win when both inputs are given.
fn source(cfg: &PipelineConfig) -> Result<SegmentSource, Error> {
    match (&cfg.io.features, &cfg.io.image) {
        (Some(f), _) => Ok(SegmentSource::Features(f.clone())),
        (None, Some(i)) => Ok(SegmentSource::Image(i.clone())),
        (None, None) => Err(Error::Config("need --features or --image".into())),
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = effective_config(cli)?;
    let out = required(&cfg.io.out, "out")?;
    match cli.command {
        Command::Synth => {
            let path = pipeline::cmd_synth(&cfg, out)?;
            println!("wrote {}", path.display());
        }
        Command::Tune => {
            let outcome = pipeline::cmd_tune(&cfg, required(&cfg.io.image, "image")?, out)?;
            for row in &outcome.log {
                println!(
                    "epoch {}: mean {:.4} std {:.4} kl {:.4}",
                    row.epoch, row.mean, row.std, row.kl
                );
            }
        }
        Command::Extract => {
            let fm = pipeline::cmd_extract(
                &cfg,
                required(&cfg.io.reservoir, "reservoir")?,
                required(&cfg.io.image, "image")?,
                cfg.features.select.as_deref(),
                out,
            )?;
            println!(
                "{}×{} pixels, {} features",
                fm.width(),
                fm.height(),
                fm.n_features()
            );
        }
        Command::Segment => {
            let seg = pipeline::cmd_segment(&cfg, &source(&cfg)?, out)?;
            println!(
                "{}: k = {}, counts {:?}",
                seg.method,
                seg.k,
                seg.label_counts()
            );
        }
        Command::Histogram => {
            let path = pipeline::cmd_histogram(&cfg, &source(&cfg)?, out)?;
            println!("wrote {}", path.display());
        }
        Command::Compare => {
            let report = pipeline::cmd_compare(&cfg, required(&cfg.io.image, "image")?, out)?;
            for c in &report.cells {
                match &c.result {
                    Ok(seg) => println!("{}: ok, counts {:?}", c.cell.name(), seg.label_counts()),
                    Err(e) => println!("{}: failed: {e}", c.cell.name()),
                }
            }
            let failed = report
                .failures()
                .next()
                .map(|c| exit_code(c.result.as_ref().unwrap_err()));
            if let Some(code) = failed {
                return Ok(code);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
