//! Discrete space-time white noise and its mollifications.
//!
//! Increments are `N(0, 1) / (sqrt(dt) h)` per node and step, so that
//! `sum_k sum_x xi f dt h^2` has variance `duration * ||f||^2`. Every step is
//! drawn from its own ChaCha block keyed by `(seed, stream_id, step)`.

use std::sync::OnceLock;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::OperatorHandle;
use crate::error::{Error, Result};
use crate::lattice::{DomainGrid, ScalarField};
use crate::linalg::pairwise_sum;

/// Generator for block `block` of the stream `(seed, stream_id)`.
pub fn keyed_rng(seed: u64, stream_id: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    // 2^36 words per block is far beyond what one field of normals consumes.
    rng.set_word_pos((block as u128) << 36);
    rng
}

/// Standard normals for one block.
pub fn standard_normals(seed: u64, stream_id: u64, block: u64, len: usize) -> Array1<f64> {
    let mut rng = keyed_rng(seed, stream_id, block);
    Array1::from_shape_fn(len, |_| StandardNormal.sample(&mut rng))
}

/// White-noise increments for step `step` of the stream.
pub fn noise_step(grid: &DomainGrid, dt: f64, seed: u64, stream_id: u64, step: u64) -> Array1<f64> {
    let scale = 1.0 / (dt.sqrt() * grid.h());
    standard_normals(seed, stream_id, step, grid.len()) * scale
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRealisation {
    pub grid: DomainGrid,
    pub dt: f64,
    pub t_start: f64,
    pub seed: u64,
    pub stream_id: u64,
    /// One row per step; row `k` acts on `[t_start + k dt, t_start + (k + 1) dt)`.
    pub increments: Array2<f64>,
}

impl NoiseRealisation {
    pub fn steps(&self) -> usize {
        self.increments.nrows()
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.steps() as f64 * self.dt
    }
}

/// Number of steps of size `dt` spanning `horizon`.
pub fn step_count(dt: f64, horizon: (f64, f64)) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidStep(format!("dt must be positive, got {dt}")));
    }
    let span = horizon.1 - horizon.0;
    if !(span > 0.0) {
        return Err(Error::InvalidHorizon(format!("empty horizon [{}, {}]", horizon.0, horizon.1)));
    }
    let steps = (span / dt).round();
    if (steps * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::InvalidHorizon(format!("horizon length {span} is not a multiple of dt = {dt}")));
    }
    Ok(steps as usize)
}

pub fn sample_white_noise(
    grid: DomainGrid,
    dt: f64,
    horizon: (f64, f64),
    seed: u64,
    stream_id: u64,
) -> Result<NoiseRealisation> {
    let steps = step_count(dt, horizon)?;
    let rows: Vec<Array1<f64>> =
        (0..steps as u64).into_par_iter().map(|k| noise_step(&grid, dt, seed, stream_id, k)).collect();
    let mut increments = Array2::zeros((steps, grid.len()));
    for (mut r, v) in increments.axis_iter_mut(Axis(0)).zip(rows) {
        r.assign(&v);
    }
    Ok(NoiseRealisation { grid, dt, t_start: horizon.0, seed, stream_id, increments })
}

/// The even bump `c exp(-1 / (1 - s^2))` on `(-1, 1)` with unit mass, and
/// its distribution function.
#[derive(Debug)]
pub struct Bump {
    mass: f64,
    cdf: Vec<f64>,
}

const BUMP_TABLE: usize = 4096;

fn raw_bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

pub fn bump() -> &'static Bump {
    static B: OnceLock<Bump> = OnceLock::new();
    B.get_or_init(|| {
        let m = BUMP_TABLE;
        let step = 2.0 / m as f64;
        let mut cdf = vec![0.0; m + 1];
        for i in 0..m {
            let (a, b) = (-1.0 + i as f64 * step, -1.0 + (i + 1) as f64 * step);
            let simpson = step / 6.0 * (raw_bump(a) + 4.0 * raw_bump(0.5 * (a + b)) + raw_bump(b));
            cdf[i + 1] = cdf[i] + simpson;
        }
        let mass = cdf[m];
        cdf.iter_mut().for_each(|v| *v /= mass);
        Bump { mass, cdf }
    })
}

impl Bump {
    /// Unnormalised mass of `exp(-1 / (1 - s^2))`.
    pub fn raw_mass(&self) -> f64 {
        self.mass
    }

    pub fn density(&self, s: f64) -> f64 {
        raw_bump(s) / self.mass
    }

    pub fn cdf(&self, s: f64) -> f64 {
        if s <= -1.0 {
            return 0.0;
        }
        if s >= 1.0 {
            return 1.0;
        }
        let x = (s + 1.0) * 0.5 * BUMP_TABLE as f64;
        let i = (x.floor() as usize).min(BUMP_TABLE - 1);
        let t = x - i as f64;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    /// `delta^{-2} rho(s / delta^2)`.
    pub fn scaled(&self, s: f64, delta: f64) -> f64 {
        let d2 = delta * delta;
        self.density(s / d2) / d2
    }
}

/// Normalised discrete weights `w_j`, `j = -J..=J`, of the time profile at
/// step `dt`; `J = 0` when `delta^2 <= dt`.
pub fn time_weights(delta: f64, dt: f64) -> Vec<f64> {
    let d2 = delta * delta;
    let jmax = ((d2 / dt - 1e-9).ceil().max(0.0) as usize).saturating_sub(1);
    let b = bump();
    let mut w: Vec<f64> = (-(jmax as i64)..=jmax as i64).map(|j| b.scaled(j as f64 * dt, delta)).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|v| *v /= s);
    } else {
        w = vec![1.0];
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MollifierMethod {
    HeatKernel,
    TimeProfile,
}

#[derive(Clone, Debug)]
pub struct MollifiedNoise {
    pub delta: f64,
    pub method: MollifierMethod,
    /// Scale of the operator whose heat kernel smooths in space (0 for the
    /// homogenised operator; meaningless for the time profile).
    pub epsilon: f64,
    pub dt: f64,
    /// Base step index of the first output row.
    pub first_step: usize,
    pub t_start: f64,
    pub values: Array2<f64>,
}

impl MollifiedNoise {
    pub fn field(&self, row: usize) -> Result<ScalarField> {
        let n = (self.values.ncols() as f64).sqrt() as usize;
        let grid = DomainGrid::new(n)?;
        Ok(ScalarField::from_values(grid, self.values.row(row).to_owned())?
            .with_time(self.t_start + row as f64 * self.dt))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidScale(format!("delta must lie in (0, 1/2), got {delta}")));
    }
    Ok(())
}

fn convolve_rows(
    base: &Array2<f64>,
    weights: &[f64],
    per_lag: impl Fn(usize, &mut Array1<f64>) + Sync,
) -> Result<(usize, Array2<f64>)> {
    let jmax = weights.len() / 2;
    let steps = base.nrows();
    if steps < 2 * jmax + 1 {
        return Err(Error::InsufficientMargin { needed: jmax });
    }
    let out_rows = steps - 2 * jmax;
    let rows: Vec<Array1<f64>> = (0..out_rows)
        .into_par_iter()
        .map(|r| {
            let k = r + jmax;
            let mut acc = Array1::zeros(base.ncols());
            for (idx, w) in weights.iter().enumerate() {
                // lag j = idx - jmax acts on base row k - j.
                let src = k + jmax - idx;
                let mut term = base.row(src).to_owned() * *w;
                per_lag(idx, &mut term);
                acc += &term;
            }
            acc
        })
        .collect();
    let mut out = Array2::zeros((out_rows, base.ncols()));
    for (mut o, v) in out.axis_iter_mut(Axis(0)).zip(rows) {
        o.assign(&v);
    }
    Ok((jmax, out))
}

/// `sum_j w_j e^{(j dt + delta^2) L} xi_{k - j}` on the rows that have a
/// full window.
pub fn mollify_heat_kernel(xi: &NoiseRealisation, delta: f64, l: &OperatorHandle) -> Result<MollifiedNoise> {
    check_delta(delta)?;
    if l.grid() != &xi.grid {
        return Err(Error::GridMismatch("noise and operator grids differ".into()));
    }
    let weights = time_weights(delta, xi.dt);
    let jmax = weights.len() / 2;
    let es = l.eigensystem()?;
    let modal = es.to_modal_rows(&xi.increments);
    let d2 = delta * delta;
    let factors: Vec<Array1<f64>> = (0..weights.len())
        .map(|idx| {
            let s = (idx as f64 - jmax as f64) * xi.dt + d2;
            es.values().mapv(|lam| (s * lam).exp())
        })
        .collect();
    let (first, out) = convolve_rows(&modal, &weights, |idx, term| *term *= &factors[idx])?;
    Ok(MollifiedNoise {
        delta,
        method: MollifierMethod::HeatKernel,
        epsilon: l.epsilon(),
        dt: xi.dt,
        first_step: first,
        t_start: xi.t_start + first as f64 * xi.dt,
        values: es.from_modal_rows(&out),
    })
}

/// Time convolution only, without spatial smoothing.
pub fn mollify_time_profile(xi: &NoiseRealisation, delta: f64) -> Result<MollifiedNoise> {
    check_delta(delta)?;
    let weights = time_weights(delta, xi.dt);
    let (first, out) = convolve_rows(&xi.increments, &weights, |_, _| {})?;
    Ok(MollifiedNoise {
        delta,
        method: MollifierMethod::TimeProfile,
        epsilon: f64::NAN,
        dt: xi.dt,
        first_step: first,
        t_start: xi.t_start + first as f64 * xi.dt,
        values: out,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IsometryReport {
    pub covariance: f64,
    /// Infinite when fewer than two draws are available.
    pub standard_error: f64,
    pub target: f64,
    pub n_draws: usize,
}

/// Monte Carlo estimate of `E <xi, f><xi, g>` for time-constant test
/// functions `f`, `g` over `horizon`; draw `d` uses stream `d`.
pub fn verify_isometry(
    grid: DomainGrid,
    dt: f64,
    horizon: (f64, f64),
    f: &ScalarField,
    g: &ScalarField,
    n_draws: usize,
    seed: u64,
) -> Result<IsometryReport> {
    let steps = step_count(dt, horizon)?;
    let w = grid.measure() * dt;
    let products: Vec<f64> = (0..n_draws as u64)
        .into_par_iter()
        .map(|d| {
            let (mut pf, mut pg) = (0.0, 0.0);
            for k in 0..steps as u64 {
                let x = noise_step(&grid, dt, seed, d, k);
                pf += x.dot(f.values()) * w;
                pg += x.dot(g.values()) * w;
            }
            pf * pg
        })
        .collect();
    let n = products.len() as f64;
    let mean = pairwise_sum(&products) / n;
    let standard_error = if products.len() < 2 {
        f64::INFINITY
    } else {
        let var = pairwise_sum(&products.iter().map(|p| (p - mean).powi(2)).collect::<Vec<_>>()) / (n - 1.0);
        (var / n).sqrt()
    };
    let target = f.inner(g)? * (horizon.1 - horizon.0);
    Ok(IsometryReport { covariance: mean, standard_error, target, n_draws })
}
