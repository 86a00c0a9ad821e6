//! Intrinsic plasticity: online adaptation of each neuron's gain and bias so that its output
//! distribution over the input stream approaches a Gaussian `N(mu_target, sigma_target²)`.
//!
//! For a tanh neuron `y = tanh(a·x + c)` the per-sample KL objective (up to constants) is
//!
//! ```text
//! L(a, b) = −ln a − ln(1 − y²) + (y − μ)² / (2σ²)
//! ```
//!
//! and gradient descent on it gives
//!
//! ```text
//! Δb = −η · (−μ/σ² + (y/σ²)(2σ² + 1 − y² + μ·y))
//! Δa = η/a + Δb · x
//! ```
//!
//! Here `x` is the un-gained drive `W_in · u + W_res · r_prev` of the neuron. The reservoir
//! itself applies the gain to the input term only, so for the gain this is the classic
//! whole-net-input form of the rule rather than the exact gradient of the update in
//! [`crate::reservoir`].
//!
//! The update runs once per pixel, so the useful learning rate scales inversely with the number
//! of pixels presented. The default suits images of roughly 10⁴–10⁵ pixels tuned for 5 epochs.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::atomic_write;
use crate::reservoir::Reservoir;

/// Smallest gain magnitude allowed after an update.
pub const MIN_GAIN: f64 = 1e-6;

/// Bin count used for the KL monitor in tuning logs.
pub const KL_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpConfig {
    pub mu_target: f64,
    /// Standard deviation of the target Gaussian (not its variance).
    pub sigma_target: f64,
    pub eta: f64,
    pub n_ip: usize,
}

impl Default for IpConfig {
    fn default() -> Self {
        IpConfig {
            mu_target: 0.0,
            sigma_target: 0.1,
            eta: 1e-6,
            n_ip: 5,
        }
    }
}

impl IpConfig {
    /// `eta = 0` is accepted and turns tuning into a no-op.
    pub fn validate(&self) -> Result<()> {
        if !self.mu_target.is_finite() {
            return Err(Error::param("ip.mu_target", "must be finite"));
        }
        if !(self.sigma_target.is_finite() && self.sigma_target > 0.0) {
            return Err(Error::param("ip.sigma_target", "must be positive"));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::param("ip.eta", "must be non-negative"));
        }
        if self.n_ip == 0 {
            return Err(Error::param("ip.n_ip", "must be at least 1"));
        }
        Ok(())
    }
}

/// `(Δa, Δb)` for one neuron with gain `a`, un-gained drive `x` and output `y`.
#[inline]
pub fn ip_delta(a: f64, x: f64, y: f64, cfg: &IpConfig) -> (f64, f64) {
    let var = cfg.sigma_target * cfg.sigma_target;
    let mu = cfg.mu_target;
    let db = -cfg.eta * (-mu / var + (y / var) * (2.0 * var + 1.0 - y * y + mu * y));
    let da = cfg.eta / a + db * x;
    (da, db)
}

/// Applies one IP update to every neuron. Returns the number of gains that had to be clamped to
/// [`MIN_GAIN`].
pub fn ip_step(
    res: &mut Reservoir,
    drive: &[f64],
    output: &[f64],
    cfg: &IpConfig,
) -> Result<usize> {
    let n = res.n_r();
    if drive.len() != n || output.len() != n {
        return Err(Error::Dimension(format!(
            "ip_step expects {n} drives and outputs, got {} and {}",
            drive.len(),
            output.len()
        )));
    }
    let (gain, bias) = res.gain_bias_mut();
    Ok(apply_ip(gain, bias, drive, output, cfg))
}

#[inline]
fn apply_ip(
    gain: &mut [f64],
    bias: &mut [f64],
    drive: &[f64],
    output: &[f64],
    cfg: &IpConfig,
) -> usize {
    let mut clamped = 0;
    for i in 0..gain.len() {
        let (da, db) = ip_delta(gain[i], drive[i], output[i], cfg);
        let old = gain[i];
        let mut a = old + da;
        if a.abs() < MIN_GAIN {
            let sign = if a != 0.0 { a.signum() } else { old.signum() };
            a = sign * MIN_GAIN;
            clamped += 1;
        }
        gain[i] = a;
        bias[i] += db;
    }
    clamped
}

/// Output statistics of one monitoring pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 0 for the untuned reservoir, `e` after `e` tuning epochs.
    pub epoch: usize,
    pub mean: f64,
    pub std: f64,
    pub kl: f64,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub reservoir: Reservoir,
    pub log: Vec<EpochStats>,
    pub clamped_gains: usize,
}

fn check_pixels(pixels: &[f64]) -> Result<()> {
    if pixels.is_empty() {
        return Err(Error::InvalidData("pixel sequence is empty".into()));
    }
    if let Some(p) = pixels.iter().find(|p| !(-1.0..=1.0).contains(*p)) {
        return Err(Error::InvalidData(format!(
            "pixel intensity {p} outside [-1, 1]"
        )));
    }
    Ok(())
}

fn check_scalar_input(res: &Reservoir) -> Result<()> {
    if res.input_dim() != 1 {
        return Err(Error::Dimension(format!(
            "gray pixels are scalar inputs but the reservoir has input_dim {}",
            res.input_dim()
        )));
    }
    Ok(())
}

/// Tunes gain and bias over `n_ip` passes of `pixels` in the given order.
///
/// The state starts at zero once and is carried from pixel to pixel and across epochs.
pub fn ip_tune(res: &Reservoir, pixels: &[f64], cfg: &IpConfig) -> Result<Reservoir> {
    Ok(run_tuning(res, pixels, cfg, false)?.reservoir)
}

/// [`ip_tune`] plus a per-epoch monitoring log. Row 0 describes the untuned reservoir.
pub fn ip_tune_logged(res: &Reservoir, pixels: &[f64], cfg: &IpConfig) -> Result<TuneOutcome> {
    run_tuning(res, pixels, cfg, true)
}

fn run_tuning(
    res: &Reservoir,
    pixels: &[f64],
    cfg: &IpConfig,
    monitor: bool,
) -> Result<TuneOutcome> {
    cfg.validate()?;
    check_pixels(pixels)?;
    check_scalar_input(res)?;

    let n = res.n_r();
    let mut tuned = res.clone();
    let mut log = Vec::new();
    if monitor {
        log.push(epoch_stats(0, &tuned, pixels, cfg));
    }

    let mut state = vec![0.0; n];
    let mut input_drive = vec![0.0; n];
    let mut recurrent = vec![0.0; n];
    let mut drive = vec![0.0; n];
    let mut clamped = 0;
    for epoch in 1..=cfg.n_ip {
        for &p in pixels {
            tuned.drives(&[p], &state, &mut input_drive, &mut recurrent);
            let (gain, bias) = tuned.gain_bias_mut();
            for i in 0..n {
                state[i] = (gain[i] * input_drive[i] + recurrent[i] + bias[i]).tanh();
                drive[i] = input_drive[i] + recurrent[i];
            }
            clamped += apply_ip(gain, bias, &drive, &state, cfg);
        }
        if monitor {
            log.push(epoch_stats(epoch, &tuned, pixels, cfg));
        }
    }
    if clamped > 0 {
        warn!("{clamped} gain updates were clamped to |a| = {MIN_GAIN}");
    }
    // re-check finiteness
    let reservoir = tuned.with_gain_bias(tuned.gain().to_vec(), tuned.bias().to_vec())?;
    Ok(TuneOutcome {
        reservoir,
        log,
        clamped_gains: clamped,
    })
}

/// Pooled neuron outputs from one pass over `pixels` with frozen parameters, using the same
/// carried-state presentation as tuning. Neuron-major within each pixel.
pub fn stream_outputs(res: &Reservoir, pixels: &[f64]) -> Result<Vec<f64>> {
    check_pixels(pixels)?;
    check_scalar_input(res)?;
    let n = res.n_r();
    let mut out = Vec::with_capacity(n * pixels.len());
    let mut state = vec![0.0; n];
    let mut next = vec![0.0; n];
    for &p in pixels {
        res.step_into(&[p], &state, &mut next);
        std::mem::swap(&mut state, &mut next);
        out.extend_from_slice(&state);
    }
    Ok(out)
}

fn epoch_stats(epoch: usize, res: &Reservoir, pixels: &[f64], cfg: &IpConfig) -> EpochStats {
    let outputs = stream_outputs(res, pixels).expect("inputs validated by caller");
    let (mean, std) = mean_std(&outputs);
    let kl = empirical_kl(&outputs, cfg.mu_target, cfg.sigma_target, KL_BINS)
        .expect("inputs validated by caller");
    EpochStats {
        epoch,
        mean,
        std,
        kl,
    }
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability mass of `N(mu, sigma²)` on `bins` equal-width bins over `[-1, 1]`, renormalized to
/// the window.
pub fn gaussian_bin_masses(mu: f64, sigma: f64, bins: usize) -> Vec<f64> {
    let width = 2.0 / bins as f64;
    let cdf: Vec<f64> = (0..=bins)
        .map(|j| normal_cdf((-1.0 + j as f64 * width - mu) / sigma))
        .collect();
    let masses: Vec<f64> = cdf.windows(2).map(|w| w[1] - w[0]).collect();
    let total: f64 = masses.iter().sum();
    if total > 0.0 {
        masses.into_iter().map(|m| m / total).collect()
    } else {
        masses
    }
}

/// Histogram estimate of `KL(samples ‖ N(mu, sigma²))` on `bins` equal-width bins over `[-1, 1]`.
///
/// Samples outside the window fall into the edge bins. Empty sample bins contribute zero.
pub fn empirical_kl(samples: &[f64], mu: f64, sigma: f64, bins: usize) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::param("sigma", "must be positive"));
    }
    if samples.len() < 2 {
        return Err(Error::InvalidData("need at least 2 samples".into()));
    }
    if bins < 2 {
        return Err(Error::param("bins", "must be at least 2"));
    }
    let mut counts = vec![0u64; bins];
    for &s in samples {
        counts[crate::features::bin_index(s, -1.0, 1.0, bins)] += 1;
    }
    let q = gaussian_bin_masses(mu, sigma, bins);
    let n = samples.len() as f64;
    let kl = counts
        .iter()
        .zip(&q)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &qi)| {
            let p = c as f64 / n;
            p * (p / qi.max(f64::MIN_POSITIVE)).ln()
        })
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// Writes the tuning log as CSV (`epoch,mean,std,kl`).
pub fn write_tuning_log(log: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,mean,std,kl\n");
    for row in log {
        writeln!(out, "{},{},{},{}", row.epoch, row.mean, row.std, row.kl).unwrap();
    }
    atomic_write(path, out.as_bytes())
}
