//! Random tanh reservoirs and their constant-input dynamics.
//!
//! The state update is
//!
//! ```text
//! r(k) = tanh(diag(gain) · W_in · u + W_res · r(k-1) + bias)
//! ```
//!
//! Note that the gain only scales the input drive, not the recurrent term.

use std::fs;
use std::ops::Deref;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::atomic_write;

/// Raw spectral radii below this are treated as degenerate draws.
pub const DEGENERATE_RADIUS: f64 = 1e-12;

/// Largest matrix size handled by the dense eigen-solver before switching to power iteration.
pub const DENSE_EIGEN_MAX: usize = 64;

const POWER_ITER_CAP: usize = 20_000;
const POWER_ITER_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reservoir {
    n_r: usize,
    input_dim: usize,
    spectral_radius_target: f64,
    seed: u64,
    /// `n_r × input_dim`, row-major.
    w_in: Vec<f64>,
    /// `n_r × n_r`, row-major.
    w_res: Vec<f64>,
    gain: Vec<f64>,
    bias: Vec<f64>,
}

/// A reservoir state vector. Components lie in `(-1, 1)` after at least one update.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirState(Vec<f64>);

impl ReservoirState {
    pub fn zeros(n_r: usize) -> Self {
        ReservoirState(vec![0.0; n_r])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for ReservoirState {
    fn from(v: Vec<f64>) -> Self {
        ReservoirState(v)
    }
}

impl Deref for ReservoirState {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Outcome of driving a reservoir with a constant input until it settles.
#[derive(Debug, Clone, PartialEq)]
pub struct Settled {
    pub state: ReservoirState,
    pub converged: bool,
    pub iterations: usize,
}

/// Draws a fully connected reservoir with `W_in`, `W_res` uniform on `[-1, 1]` and rescales
/// `W_res` to the requested spectral radius. Gain starts at one and bias at zero.
///
/// A draw whose spectral radius is below [`DEGENERATE_RADIUS`] is discarded and the next seed is
/// tried; the seed actually used is stored in the returned reservoir.
pub fn generate_reservoir(
    n_r: usize,
    input_dim: usize,
    spectral_radius: f64,
    seed: u64,
) -> Result<Reservoir> {
    if n_r == 0 {
        return Err(Error::param("n_r", "must be at least 1"));
    }
    if input_dim == 0 {
        return Err(Error::param("input_dim", "must be at least 1"));
    }
    if !(spectral_radius.is_finite() && spectral_radius > 0.0) {
        return Err(Error::param(
            "spectral_radius",
            format!("must be positive and finite, got {spectral_radius}"),
        ));
    }

    let mut effective_seed = seed;
    for _ in 0..64 {
        let mut rng = ChaCha8Rng::seed_from_u64(effective_seed);
        let w_in: Vec<f64> = (0..n_r * input_dim)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let mut w_res: Vec<f64> = (0..n_r * n_r)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let raw = spectral_radius_of(&w_res, n_r)?;
        if raw < DEGENERATE_RADIUS {
            warn!(
                "reservoir draw for seed {effective_seed} has spectral radius {raw:e}; regenerating with seed {}",
                effective_seed.wrapping_add(1)
            );
            effective_seed = effective_seed.wrapping_add(1);
            continue;
        }
        let scale = spectral_radius / raw;
        w_res.iter_mut().for_each(|w| *w *= scale);
        return Ok(Reservoir {
            n_r,
            input_dim,
            spectral_radius_target: spectral_radius,
            seed: effective_seed,
            w_in,
            w_res,
            gain: vec![1.0; n_r],
            bias: vec![0.0; n_r],
        });
    }
    Err(Error::Numerical(format!(
        "64 consecutive degenerate reservoir draws starting at seed {seed}"
    )))
}

/// Largest eigenvalue magnitude of the row-major `n × n` matrix `m`.
///
/// Up to [`DENSE_EIGEN_MAX`] the full spectrum is computed from a real Schur decomposition.
/// Larger matrices use power iteration and fall back to the dense solver if the estimate does
/// not settle (e.g. a dominant complex pair).
pub fn spectral_radius(m: &[f64], n: usize) -> Result<f64> {
    if n == 0 || m.len() != n * n {
        return Err(Error::Dimension(format!(
            "expected a square {n}×{n} matrix, got {} entries",
            m.len()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidData("matrix has non-finite entries".into()));
    }
    spectral_radius_of(m, n)
}

fn spectral_radius_of(m: &[f64], n: usize) -> Result<f64> {
    if n > DENSE_EIGEN_MAX {
        if let Some(rho) = power_iteration(m, n) {
            return Ok(rho);
        }
        warn!("power iteration did not converge for {n}×{n} matrix; using dense eigen-solve");
    }
    dense_spectral_radius(m, n)
}

fn dense_spectral_radius(m: &[f64], n: usize) -> Result<f64> {
    let mat = DMatrix::from_row_slice(n, n, m);
    let schur = mat.try_schur(f64::EPSILON, 100_000).ok_or_else(|| {
        Error::Numerical(format!("Schur decomposition failed for {n}×{n} matrix"))
    })?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

fn power_iteration(m: &[f64], n: usize) -> Option<f64> {
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut prev = f64::NAN;
    let mut stable = 0;
    for _ in 0..POWER_ITER_CAP {
        for (row, yi) in m.chunks_exact(n).zip(y.iter_mut()) {
            *yi = row.iter().zip(&x).map(|(a, b)| a * b).sum();
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        x.iter_mut().zip(&y).for_each(|(xi, yi)| *xi = yi / norm);
        if (norm - prev).abs() <= POWER_ITER_RTOL * norm {
            stable += 1;
            if stable >= 8 {
                return Some(norm);
            }
        } else {
            stable = 0;
        }
        prev = norm;
    }
    None
}

impl Reservoir {
    /// Assembles a reservoir from explicit parts. `w_in` and `w_res` are row-major.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_r: usize,
        input_dim: usize,
        w_in: Vec<f64>,
        w_res: Vec<f64>,
        gain: Vec<f64>,
        bias: Vec<f64>,
        spectral_radius_target: f64,
        seed: u64,
    ) -> Result<Self> {
        let res = Reservoir {
            n_r,
            input_dim,
            spectral_radius_target,
            seed,
            w_in,
            w_res,
            gain,
            bias,
        };
        res.validate()?;
        Ok(res)
    }

    fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.input_dim == 0 {
            return Err(Error::Dimension(
                "n_r and input_dim must be positive".into(),
            ));
        }
        let checks = [
            ("w_in", self.w_in.len(), self.n_r * self.input_dim),
            ("w_res", self.w_res.len(), self.n_r * self.n_r),
            ("gain", self.gain.len(), self.n_r),
            ("bias", self.bias.len(), self.n_r),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{name} has {got} entries, expected {want}"
                )));
            }
        }
        let all = self
            .w_in
            .iter()
            .chain(&self.w_res)
            .chain(&self.gain)
            .chain(&self.bias);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::InvalidData(
                "reservoir has non-finite parameters".into(),
            ));
        }
        Ok(())
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn spectral_radius_target(&self) -> f64 {
        self.spectral_radius_target
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn w_in(&self) -> &[f64] {
        &self.w_in
    }

    pub fn w_res(&self) -> &[f64] {
        &self.w_res
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn gain_bias_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.gain, &mut self.bias)
    }

    /// Returns a copy with the given gain and bias vectors.
    pub fn with_gain_bias(&self, gain: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        Reservoir::from_parts(
            self.n_r,
            self.input_dim,
            self.w_in.clone(),
            self.w_res.clone(),
            gain,
            bias,
            self.spectral_radius_target,
            self.seed,
        )
    }

    /// Writes `W_in · u` into `input_drive` and `W_res · r_prev` into `recurrent`.
    #[inline]
    pub(crate) fn drives(
        &self,
        u: &[f64],
        r_prev: &[f64],
        input_drive: &mut [f64],
        recurrent: &mut [f64],
    ) {
        let n = self.n_r;
        for i in 0..n {
            let row_in = &self.w_in[i * self.input_dim..(i + 1) * self.input_dim];
            input_drive[i] = row_in.iter().zip(u).map(|(w, x)| w * x).sum();
            let row_res = &self.w_res[i * n..(i + 1) * n];
            recurrent[i] = row_res.iter().zip(r_prev).map(|(w, x)| w * x).sum();
        }
    }

    /// Unchecked update into `out`; the hot loop behind [`Reservoir::step`] and [`Reservoir::settle`].
    #[inline]
    pub(crate) fn step_into(&self, u: &[f64], r_prev: &[f64], out: &mut [f64]) {
        let n = self.n_r;
        for i in 0..n {
            let row_in = &self.w_in[i * self.input_dim..(i + 1) * self.input_dim];
            let input: f64 = row_in.iter().zip(u).map(|(w, x)| w * x).sum();
            let row_res = &self.w_res[i * n..(i + 1) * n];
            let rec: f64 = row_res.iter().zip(r_prev).map(|(w, x)| w * x).sum();
            out[i] = (self.gain[i] * input + rec + self.bias[i]).tanh();
        }
    }

    pub fn step(&self, u: &[f64], r_prev: &[f64]) -> Result<ReservoirState> {
        if u.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has length {}, reservoir expects {}",
                u.len(),
                self.input_dim
            )));
        }
        if r_prev.len() != self.n_r {
            return Err(Error::Dimension(format!(
                "state has length {}, reservoir has {} neurons",
                r_prev.len(),
                self.n_r
            )));
        }
        let mut out = vec![0.0; self.n_r];
        self.step_into(u, r_prev, &mut out);
        Ok(ReservoirState(out))
    }

    /// Drives the reservoir from the zero state with the constant input `u`.
    ///
    /// Stops as soon as `‖r(k) − r(k−1)‖_∞ < tol`, otherwise after exactly `n_it` steps.
    pub fn settle(&self, u: &[f64], n_it: usize, tol: f64) -> Result<Settled> {
        self.settle_from(u, &ReservoirState::zeros(self.n_r), n_it, tol)
    }

    /// Like [`Reservoir::settle`] but from an arbitrary initial state.
    pub fn settle_from(&self, u: &[f64], r0: &[f64], n_it: usize, tol: f64) -> Result<Settled> {
        if n_it == 0 {
            return Err(Error::param("n_it", "must be at least 1"));
        }
        if !(tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        // validates dimensions
        let mut cur = self.step(u, r0)?.into_inner();
        let mut next = vec![0.0; self.n_r];
        let mut delta = max_abs_diff(&cur, r0);
        let mut k = 1;
        while delta >= tol && k < n_it {
            self.step_into(u, &cur, &mut next);
            delta = max_abs_diff(&next, &cur);
            std::mem::swap(&mut cur, &mut next);
            k += 1;
        }
        Ok(Settled {
            state: ReservoirState(cur),
            converged: delta < tol,
            iterations: k,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidData(format!("reservoir serialization: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let res: Reservoir = serde_json::from_str(s)
            .map_err(|e| Error::InvalidData(format!("reservoir document: {e}")))?;
        res.validate()?;
        Ok(res)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Reservoir::from_json(&text)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
