//! Stationary solutions of the linear equation `d psi = L psi dt + dW`,
//! their (cross-)covariance kernels, renormalisation profiles and Wick
//! calculus.
//!
//! In the eigenbases `{v_i}` of `L1` and `{u_j}` of `L2`, driven by the same
//! white noise, the stationary cross covariance is
//! `rho(x, y) = h^{-2} sum_ij v_i(x) <v_i, u_j> w(l_i, m_j) u_j(y)`, where the
//! pair weight `w` depends on the time treatment: `1 / |l + m|` for the
//! exact dynamics, its heat-kernel or time-profile mollification, or the
//! stationary law of the implicit Euler recursion.

use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{Eigensystem, OperatorHandle};
use crate::error::{Error, Result};
use crate::lattice::{sample_on_grid, DomainGrid, PeriodicCoefficient, ScalarField};
use crate::linalg::{cholesky_lower, pairwise_sum};
use crate::noise::{bump, noise_step, standard_normals, step_count, MollifierMethod, NoiseRealisation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovarianceMethod {
    /// Continuous-time dynamics with the grid as the only cutoff.
    Exact,
    /// Noise mollified at scale `delta`.
    Mollified { delta: f64, method: MollifierMethod },
    /// Stationary law of `psi_{k+1} = (I - dt L)^{-1} (psi_k + dt xi_k)`.
    ImplicitEuler { dt: f64 },
}

impl CovarianceMethod {
    pub fn delta(&self) -> Option<f64> {
        match self {
            CovarianceMethod::Mollified { delta, .. } => Some(*delta),
            _ => None,
        }
    }
}

const HEAT_NODES: usize = 256;
const PROFILE_NODES: usize = 128;

/// Composite Simpson nodes and weights on `[-1, 1]` with `m` (even) intervals.
fn simpson(m: usize) -> (Vec<f64>, Vec<f64>) {
    let step = 2.0 / m as f64;
    let x: Vec<f64> = (0..=m).map(|k| -1.0 + k as f64 * step).collect();
    let w: Vec<f64> = (0..=m)
        .map(|k| {
            let c = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            c * step / 3.0
        })
        .collect();
    (x, w)
}

/// Evaluator of the pair weight `w(l, m)` for negative eigenvalues.
struct PairWeight {
    method: CovarianceMethod,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PairWeight {
    fn new(method: CovarianceMethod) -> Result<Self> {
        let (nodes, weights) = match method {
            CovarianceMethod::Exact => (vec![], vec![]),
            CovarianceMethod::ImplicitEuler { dt } => {
                if !(dt > 0.0) {
                    return Err(Error::InvalidStep(format!("dt must be positive, got {dt}")));
                }
                (vec![], vec![])
            }
            CovarianceMethod::Mollified { delta, method } => {
                if !(delta > 0.0 && delta < 0.5) {
                    return Err(Error::InvalidScale(format!("delta must lie in (0, 1/2), got {delta}")));
                }
                let b = bump();
                match method {
                    MollifierMethod::HeatKernel => {
                        let (x, w) = simpson(HEAT_NODES);
                        let w = x.iter().zip(&w).map(|(s, w)| w * b.cdf(*s).powi(2)).collect();
                        (x, w)
                    }
                    MollifierMethod::TimeProfile => {
                        let (x, w) = simpson(PROFILE_NODES);
                        let w = x.iter().zip(&w).map(|(s, w)| w * b.density(*s)).collect();
                        (x, w)
                    }
                }
            }
        };
        Ok(Self { method, nodes, weights })
    }

    fn eval(&self, l: f64, m: f64) -> f64 {
        let s = l + m;
        match self.method {
            CovarianceMethod::Exact => -1.0 / s,
            CovarianceMethod::ImplicitEuler { dt } => {
                let r = 1.0 / ((1.0 - dt * l) * (1.0 - dt * m));
                dt * r / (1.0 - r)
            }
            CovarianceMethod::Mollified { delta, method: MollifierMethod::HeatKernel } => {
                // int R(u)^2 e^{(u + d^2) s} du over |u| < d^2, then the tail u > d^2.
                let d2 = delta * delta;
                let body: f64 = self
                    .nodes
                    .iter()
                    .zip(&self.weights)
                    .map(|(x, w)| w * (d2 * (x + 1.0) * s).exp())
                    .sum();
                d2 * body - (2.0 * d2 * s).exp() / s
            }
            CovarianceMethod::Mollified { delta, method: MollifierMethod::TimeProfile } => {
                // int int rho rho e^{l (u - v) + m (u - v')} du, u > max(v, v').
                let d2 = delta * delta;
                let mut acc = 0.0;
                for (a, wa) in self.nodes.iter().zip(&self.weights) {
                    for (b, wb) in self.nodes.iter().zip(&self.weights) {
                        let (va, vb) = (d2 * a, d2 * b);
                        let top = va.max(vb);
                        acc += wa * wb * (l * (top - va) + m * (top - vb)).exp();
                    }
                }
                -acc / s
            }
        }
    }
}

/// `rho(x, y)` over interior node pairs.
#[derive(Clone, Debug)]
pub struct CovarianceKernel {
    pub eps_pair: (f64, f64),
    pub method: CovarianceMethod,
    pub grid: DomainGrid,
    pub matrix: Array2<f64>,
}

impl CovarianceKernel {
    pub fn diagonal(&self) -> Array1<f64> {
        self.matrix.diag().to_owned()
    }

    pub fn is_auto(&self) -> bool {
        self.eps_pair.0 == self.eps_pair.1
    }

    /// `|| self - other ||_{L^2(D x D)}`.
    pub fn l2_distance(&self, other: &CovarianceKernel) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("kernels on different grids".into()));
        }
        let sq: Vec<f64> = self.matrix.iter().zip(other.matrix.iter()).map(|(a, b)| (a - b).powi(2)).collect();
        Ok((pairwise_sum(&sq) * self.grid.measure().powi(2)).sqrt())
    }
}

/// `h^{-2} V^T diag(w) V` assembled from the eigensystem.
fn auto_kernel(es: &Eigensystem, w: &Array1<f64>, h2: f64) -> Array2<f64> {
    let n = es.len();
    if es.is_separable() {
        let a = es.from_modal_rows(&Array2::from_diag(w));
        let a = a.reversed_axes().as_standard_layout().to_owned();
        return es.from_modal_rows(&a) / h2;
    }
    // Rows of B are sqrt(w_k) v_k.
    let mut modes = es.from_modal_rows(&Array2::eye(n));
    modes.axis_iter_mut(Axis(0)).zip(w.iter()).for_each(|(mut r, wk)| r *= wk.sqrt());
    modes.t().dot(&modes) / h2
}

/// Stationary covariance of the linear dynamics for `L`.
pub fn stationary_covariance(l: &OperatorHandle, method: CovarianceMethod) -> Result<CovarianceKernel> {
    let es = l.eigensystem()?;
    let pw = PairWeight::new(method)?;
    let w = es.values().mapv(|lam| pw.eval(lam, lam));
    if let Some(k) = w.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NumericalFailure(format!("non-positive modal variance {} at mode {k}", w[k])));
    }
    let matrix = auto_kernel(&es, &w, l.grid().measure());
    Ok(CovarianceKernel { eps_pair: (l.epsilon(), l.epsilon()), method, grid: *l.grid(), matrix })
}

/// `P_ij = <v_i, u_j>` for the eigenbases of `e1` and `e2`.
fn overlap(e1: &Eigensystem, e2: &Eigensystem) -> Array2<f64> {
    match (e1.is_separable(), e2.is_separable()) {
        (true, true) => Array2::eye(e1.len()),
        (false, _) => {
            let m1 = e1.from_modal_rows(&Array2::eye(e1.len()));
            e2.to_modal_rows(&m1)
        }
        (true, false) => {
            let m2 = e2.from_modal_rows(&Array2::eye(e2.len()));
            e1.to_modal_rows(&m2).reversed_axes().as_standard_layout().to_owned()
        }
    }
}

/// Stationary cross covariance `E psi_1(x) psi_2(y)` of two linear
/// solutions driven by the same noise. The result for `(L2, L1)` is the exact
/// transpose of the result for `(L1, L2)`.
pub fn cross_covariance(l1: &OperatorHandle, l2: &OperatorHandle, method: CovarianceMethod) -> Result<CovarianceKernel> {
    if l1.grid() != l2.grid() {
        return Err(Error::GridMismatch("operators live on different grids".into()));
    }
    if std::ptr::eq(l1, l2) || l1.stiffness() == l2.stiffness() {
        let k = stationary_covariance(l1, method)?;
        return Ok(CovarianceKernel { eps_pair: (l1.epsilon(), l2.epsilon()), ..k });
    }
    if l1.epsilon() < l2.epsilon() {
        let k = cross_covariance(l2, l1, method)?;
        return Ok(CovarianceKernel {
            eps_pair: (l1.epsilon(), l2.epsilon()),
            method,
            grid: k.grid,
            matrix: k.matrix.reversed_axes().as_standard_layout().to_owned(),
        });
    }
    let (e1, e2) = (l1.eigensystem()?, l2.eigensystem()?);
    let pw = PairWeight::new(method)?;
    let mut q = overlap(&e1, &e2);
    let (v1, v2) = (e1.values(), e2.values());
    let cols = q.ncols();
    let flat = q.as_slice_mut().expect("standard layout");
    flat.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        for (j, x) in row.iter_mut().enumerate() {
            if *x != 0.0 {
                *x *= pw.eval(v1[i], v2[j]);
            }
        }
    });
    let x = e2.from_modal_rows(&q).reversed_axes().as_standard_layout().to_owned();
    let matrix = e1.from_modal_rows(&x).reversed_axes().as_standard_layout().to_owned() / l1.grid().measure();
    Ok(CovarianceKernel { eps_pair: (l1.epsilon(), l2.epsilon()), method, grid: *l1.grid(), matrix })
}

/// Lower factor of a covariance kernel for repeated sampling.
#[derive(Clone, Debug)]
pub struct StationarySampler {
    grid: DomainGrid,
    factor: Arc<Array2<f64>>,
    /// Diagonal jitter that was needed for the factorisation.
    pub jitter: f64,
}

impl StationarySampler {
    pub fn new(sigma: &CovarianceKernel) -> Result<Self> {
        if !sigma.is_auto() {
            return Err(Error::Unsupported("sampling needs an auto-covariance kernel".into()));
        }
        let trace = sigma.matrix.diag().sum();
        let mut last = None;
        for jitter in [0.0, 1e-15, 1e-14, 1e-13, 1e-12].map(|j| j * trace) {
            let m = if jitter == 0.0 { sigma.matrix.clone() } else { &sigma.matrix + &(Array2::<f64>::eye(sigma.grid.len()) * jitter) };
            match cholesky_lower(&m) {
                Ok(f) => return Ok(Self { grid: sigma.grid, factor: Arc::new(f), jitter }),
                Err(e) => last = Some(e),
            }
        }
        Err(Error::NotPositiveSemidefinite(format!(
            "factorisation failed up to jitter 1e-12 * trace ({:?})",
            last
        )))
    }

    pub fn draw(&self, seed: u64, stream_id: u64) -> ScalarField {
        let z = standard_normals(seed, stream_id, 0, self.grid.len());
        ScalarField::from_values(self.grid, self.factor.dot(&z)).expect("finite sample").with_seed(seed)
    }
}

pub fn sample_stationary(sigma: &CovarianceKernel, seed: u64) -> Result<ScalarField> {
    Ok(StationarySampler::new(sigma)?.draw(seed, 0))
}

/// Implicit Euler path from `psi0` driven by `xi` over `[t_start, t_start + t_end]`.
pub fn evolve_linear(l: &OperatorHandle, psi0: &ScalarField, xi: &NoiseRealisation, t_end: f64) -> Result<Vec<ScalarField>> {
    let steps = step_count(xi.dt, (0.0, t_end))?;
    if steps > xi.steps() {
        return Err(Error::InvalidHorizon(format!(
            "noise covers {} steps, {} requested",
            xi.steps(),
            steps
        )));
    }
    evolve_linear_forced(l, psi0, xi.increments.slice(ndarray::s![..steps, ..]), xi.dt, xi.t_start)
}

/// As [`evolve_linear`] with an arbitrary forcing, one row per step.
pub fn evolve_linear_forced(
    l: &OperatorHandle,
    psi0: &ScalarField,
    forcing: ndarray::ArrayView2<f64>,
    dt: f64,
    t_start: f64,
) -> Result<Vec<ScalarField>> {
    if psi0.grid() != l.grid() || forcing.ncols() != l.grid().len() {
        return Err(Error::GridMismatch("initial datum, forcing and operator must share the grid".into()));
    }
    let factor = l.implicit_factor(dt)?;
    let mut path = Vec::with_capacity(forcing.nrows() + 1);
    let mut psi = psi0.values().clone();
    path.push(ScalarField::from_values(*l.grid(), psi.clone())?.with_time(t_start));
    for (k, f) in forcing.axis_iter(Axis(0)).enumerate() {
        let rhs = &psi + &(&f * dt);
        psi = factor.solve(rhs.view())?;
        path.push(ScalarField::from_values(*l.grid(), psi.clone())?.with_time(t_start + (k + 1) as f64 * dt));
    }
    Ok(path)
}

/// Time-averaged estimate of selected covariance entries from one long
/// coupled implicit Euler run, with batch-means standard errors.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EmpiricalEntry {
    pub x: usize,
    pub y: usize,
    pub mean: f64,
    pub standard_error: f64,
}

pub fn time_average_covariance(
    l1: &OperatorHandle,
    l2: &OperatorHandle,
    dt: f64,
    steps: usize,
    burn_in: usize,
    seed: u64,
    pairs: &[(usize, usize)],
) -> Result<Vec<EmpiricalEntry>> {
    const BATCHES: usize = 20;
    if steps < BATCHES {
        return Err(Error::InsufficientData(format!("need at least {BATCHES} steps")));
    }
    let g = *l1.grid();
    let (f1, f2) = (l1.implicit_factor(dt)?, l2.implicit_factor(dt)?);
    let mut p1 = Array1::<f64>::zeros(g.len());
    let mut p2 = Array1::<f64>::zeros(g.len());
    let per = steps / BATCHES;
    let mut batch = vec![vec![0.0; BATCHES]; pairs.len()];
    for k in 0..burn_in + per * BATCHES {
        let xi = noise_step(&g, dt, seed, 0, k as u64) * dt;
        p1 = f1.solve((&p1 + &xi).view())?;
        p2 = f2.solve((&p2 + &xi).view())?;
        if k >= burn_in {
            let b = (k - burn_in) / per;
            for (slot, &(x, y)) in pairs.iter().enumerate() {
                batch[slot][b] += p1[x] * p2[y] / per as f64;
            }
        }
    }
    Ok(pairs
        .iter()
        .zip(batch)
        .map(|(&(x, y), b)| {
            let m = pairwise_sum(&b) / BATCHES as f64;
            let var = b.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
            EmpiricalEntry { x, y, mean: m, standard_error: (var / BATCHES as f64).sqrt() }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileMethod {
    LyapunovExact,
    MonteCarlo { samples: usize },
    /// `(slope |ln delta| + intercept) det(a(x / epsilon))^{-1/2}`.
    Comparison { slope: f64, intercept: f64 },
}

/// Renormalisation constant `C(x)` per node.
#[derive(Clone, Debug)]
pub struct RenormalisationProfile {
    pub grid: DomainGrid,
    pub values: Array1<f64>,
    pub delta: Option<f64>,
    pub epsilon: f64,
    pub method: ProfileMethod,
}

impl RenormalisationProfile {
    pub fn constant(grid: DomainGrid, c: f64) -> Self {
        Self { grid, values: Array1::from_elem(grid.len(), c), delta: None, epsilon: 0.0, method: ProfileMethod::LyapunovExact }
    }

    pub fn spatial_mean(&self) -> f64 {
        pairwise_sum(self.values.as_slice().expect("contiguous")) / self.values.len() as f64
    }

    /// CSV with columns `x_index,y_index,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x_index,y_index,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let (i, j) = self.grid.ij(k);
            s.push_str(&format!("{i},{j},{v:.17e}\n"));
        }
        s
    }
}

/// Diagonal of an auto-covariance kernel.
pub fn renormalisation_constant(sigma: &CovarianceKernel) -> Result<RenormalisationProfile> {
    if !sigma.is_auto() {
        return Err(Error::Unsupported("renormalisation needs an auto-covariance kernel".into()));
    }
    let values = sigma.diagonal();
    if let Some(k) = values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NumericalFailure(format!("non-positive variance at node {k}")));
    }
    Ok(RenormalisationProfile {
        grid: sigma.grid,
        values,
        delta: sigma.method.delta(),
        epsilon: sigma.eps_pair.0,
        method: ProfileMethod::LyapunovExact,
    })
}

/// Diagonal of the stationary covariance without assembling the kernel.
pub fn renormalisation_profile(l: &OperatorHandle, method: CovarianceMethod) -> Result<RenormalisationProfile> {
    let es = l.eigensystem()?;
    let pw = PairWeight::new(method)?;
    let w = es.values().mapv(|lam| pw.eval(lam, lam));
    let h2 = l.grid().measure();
    let mut modes = es.from_modal_rows(&Array2::eye(es.len()));
    modes.mapv_inplace(|v| v * v);
    let values = modes.t().dot(&w) / h2;
    Ok(RenormalisationProfile {
        grid: *l.grid(),
        values,
        delta: method.delta(),
        epsilon: l.epsilon(),
        method: ProfileMethod::LyapunovExact,
    })
}

/// `int C(x) dx = sum_k w(l_k, l_k)`, from the eigenvalues alone.
pub fn renormalisation_mean(l: &OperatorHandle, method: CovarianceMethod) -> Result<f64> {
    let lam = l.eigenvalues()?;
    let pw = PairWeight::new(method)?;
    let terms: Vec<f64> = lam.iter().map(|&x| pw.eval(x, x)).collect();
    Ok(pairwise_sum(&terms))
}

/// Empirical variance per node of mean-zero samples.
pub fn empirical_profile(samples: &[ScalarField]) -> Result<RenormalisationProfile> {
    let first = samples.first().ok_or_else(|| Error::InsufficientData("no samples".into()))?;
    let g = *first.grid();
    let mut acc = Array1::<f64>::zeros(g.len());
    for s in samples {
        if s.grid() != &g {
            return Err(Error::GridMismatch("samples on different grids".into()));
        }
        acc += &s.values().mapv(|v| v * v);
    }
    Ok(RenormalisationProfile {
        grid: g,
        values: acc / samples.len() as f64,
        delta: None,
        epsilon: f64::NAN,
        method: ProfileMethod::MonteCarlo { samples: samples.len() },
    })
}

/// `s(delta) = slope |ln delta| + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogScale {
    pub slope: f64,
    pub intercept: f64,
}

impl LogScale {
    pub fn at(&self, delta: f64) -> f64 {
        self.slope * delta.ln().abs() + self.intercept
    }

    /// Least-squares fit of `values` against `|ln delta|`.
    pub fn fit(deltas: &[f64], values: &[f64]) -> Result<Self> {
        if deltas.len() != values.len() || deltas.len() < 2 {
            return Err(Error::InsufficientData("need at least two (delta, value) pairs".into()));
        }
        let x: Vec<f64> = deltas.iter().map(|d| d.ln().abs()).collect();
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = values.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let sxy: f64 = x.iter().zip(values).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        Ok(Self { slope, intercept: my - slope * mx })
    }
}

/// `s(delta) det(a(x / epsilon))^{-1/2}` on the grid nodes.
pub fn comparison_profile(
    a: &PeriodicCoefficient,
    epsilon: f64,
    delta: f64,
    grid: &DomainGrid,
    scale: LogScale,
) -> Result<RenormalisationProfile> {
    let s = scale.at(delta);
    let values = sample_on_grid(a, epsilon, grid)?.iter().map(|m| s / m.det().sqrt()).collect();
    Ok(RenormalisationProfile {
        grid: *grid,
        values,
        delta: Some(delta),
        epsilon,
        method: ProfileMethod::Comparison { slope: scale.slope, intercept: scale.intercept },
    })
}

/// `H_m(x; c)` from `H_{m+1} = x H_m - m c H_{m-1}`.
pub fn hermite(m: usize, x: f64, c: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if m == 0 {
        return prev;
    }
    for k in 1..m {
        let next = x * cur - k as f64 * c * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `H_0..=H_m` at once.
pub fn hermite_all(m: usize, x: f64, c: f64) -> Vec<f64> {
    let mut h = Vec::with_capacity(m + 1);
    h.push(1.0);
    if m >= 1 {
        h.push(x);
    }
    for k in 1..m {
        h.push(x * h[k] - k as f64 * c * h[k - 1]);
    }
    h
}

/// `H_m(x + d; c) = sum_j binom(m, j) d^j H_{m-j}(x; c)`.
pub fn hermite_shifted(m: usize, x: f64, d: f64, c: f64) -> f64 {
    let h = hermite_all(m, x, c);
    let mut binom = 1.0;
    let mut dp = 1.0;
    let mut acc = 0.0;
    for j in 0..=m {
        acc += binom * dp * h[m - j];
        binom = binom * (m - j) as f64 / (j + 1) as f64;
        dp *= d;
    }
    acc
}

pub fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// `H_m(psi(x); C(x))` per node.
#[derive(Clone, Debug)]
pub struct WickPowerField {
    pub order: usize,
    pub values: ScalarField,
    pub variance: Array1<f64>,
}

pub fn wick_power(psi: &ScalarField, m: usize, c: &RenormalisationProfile) -> Result<WickPowerField> {
    if psi.grid() != &c.grid {
        return Err(Error::ShapeMismatch("field and variance profile differ in shape".into()));
    }
    let v = psi.values().iter().zip(c.values.iter()).map(|(&x, &cv)| hermite(m, x, cv)).collect();
    let mut values = ScalarField::from_values(*psi.grid(), v)?;
    if let Some(t) = psi.time() {
        values = values.with_time(t);
    }
    Ok(WickPowerField { order: m, values, variance: c.values.clone() })
}

/// `m! int int f(x) g(y) rho(x, y)^m dx dy`.
pub fn wick_moment_oracle(m: usize, rho: &CovarianceKernel, f: &ScalarField, g: &ScalarField) -> Result<f64> {
    if f.grid() != &rho.grid || g.grid() != &rho.grid {
        return Err(Error::ShapeMismatch("test functions and kernel differ in shape".into()));
    }
    let fv = f.values();
    let gv = g.values();
    let rows: Vec<f64> = (0..rho.grid.len())
        .into_par_iter()
        .map(|x| {
            if fv[x] == 0.0 {
                return 0.0;
            }
            let r = rho.matrix.row(x);
            let t: Vec<f64> = r.iter().zip(gv.iter()).map(|(p, gy)| gy * p.powi(m as i32)).collect();
            fv[x] * pairwise_sum(&t)
        })
        .collect();
    Ok(factorial(m) * pairwise_sum(&rows) * rho.grid.measure().powi(2))
}
