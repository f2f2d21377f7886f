//! Discrete divergence-form operators on the Dirichlet square, their
//! semigroups, heat kernels and kernel-bound diagnostics.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cell::HomogenisedMatrix;
use crate::error::{Error, Result};
use crate::lattice::{is_commensurate, DomainGrid, PeriodicCoefficient, ScalarField, Sym2};
use crate::linalg::{pairwise_sum, sine_basis, sine_eigenvalues, sym_eigen, sym_eigenvalues, BandedCholesky, CsrMatrix};
use crate::stencil::{cross_block, harmonic};

/// Largest grid for which a dense eigendecomposition is computed on demand.
pub const MAX_EIGEN_N: usize = 96;
/// Below this size `apply_semigroup` builds the eigensystem automatically.
const AUTO_EIGEN_N: usize = 32;

pub const POWER_TOL: f64 = 1e-6;
const POWER_BUDGET: usize = 500;

/// Source of the coefficient for [`assemble_operator`].
#[derive(Clone, Copy, Debug)]
pub enum OperatorCoefficient<'a> {
    Periodic(&'a PeriodicCoefficient),
    Homogenised(&'a HomogenisedMatrix),
    Constant(Sym2),
}

/// Orthonormal eigenvectors of an operator.
#[derive(Debug)]
enum ModalBasis {
    /// One eigenvector per row.
    Dense(Array2<f64>),
    /// Tensor product of the 1D sine basis; mode `(p, q)` has index `q n + p`.
    Separable { n: usize, sine: Array2<f64> },
}

/// Eigenvalues (all negative) and eigenvectors of a discrete operator.
#[derive(Debug)]
pub struct Eigensystem {
    values: Array1<f64>,
    basis: ModalBasis,
}

impl Eigensystem {
    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.basis, ModalBasis::Separable { .. })
    }

    /// Coefficients `c_k = <v_k, f>` in the Euclidean inner product.
    pub fn to_modal(&self, f: ArrayView1<f64>) -> Array1<f64> {
        match &self.basis {
            ModalBasis::Dense(v) => v.dot(&f),
            ModalBasis::Separable { n, sine } => separable_transform(*n, sine, f),
        }
    }

    pub fn from_modal(&self, c: ArrayView1<f64>) -> Array1<f64> {
        match &self.basis {
            ModalBasis::Dense(v) => v.t().dot(&c),
            ModalBasis::Separable { n, sine } => separable_transform(*n, sine, c),
        }
    }

    /// Applies [`Self::to_modal`] to every row of `m`.
    pub fn to_modal_rows(&self, m: &Array2<f64>) -> Array2<f64> {
        match &self.basis {
            ModalBasis::Dense(v) => m.dot(&v.t()),
            ModalBasis::Separable { n, sine } => transform_rows(*n, sine, m),
        }
    }

    /// Applies [`Self::from_modal`] to every row of `c`.
    pub fn from_modal_rows(&self, c: &Array2<f64>) -> Array2<f64> {
        match &self.basis {
            ModalBasis::Dense(v) => c.dot(v),
            ModalBasis::Separable { n, sine } => transform_rows(*n, sine, c),
        }
    }

    /// Component `k` of every eigenvector, i.e. `to_modal` of the unit
    /// vector at node `k`.
    pub fn node_column(&self, k: usize) -> Array1<f64> {
        match &self.basis {
            ModalBasis::Dense(v) => v.column(k).to_owned(),
            ModalBasis::Separable { n, sine } => {
                let (i, j) = (k % n, k / n);
                Array1::from_shape_fn(n * n, |m| sine[[m / n, j]] * sine[[m % n, i]])
            }
        }
    }

    /// `V f` with `f(lambda)` applied modally: `sum_k f(l_k) v_k v_kᵀ x`.
    pub fn apply_function(&self, x: ArrayView1<f64>, f: impl Fn(f64) -> f64) -> Array1<f64> {
        let mut c = self.to_modal(x);
        c.iter_mut().zip(self.values.iter()).for_each(|(c, &l)| *c *= f(l));
        self.from_modal(c.view())
    }
}

/// `S F S` for `F` the `n x n` reshaping of `f` (rows indexed by `j`).
fn separable_transform(n: usize, sine: &Array2<f64>, f: ArrayView1<f64>) -> Array1<f64> {
    let fm = f.to_owned().into_shape_with_order((n, n)).expect("square field");
    sine.dot(&fm).dot(sine).into_shape_with_order(n * n).expect("flatten")
}

fn transform_rows(n: usize, sine: &Array2<f64>, m: &Array2<f64>) -> Array2<f64> {
    let rows: Vec<Array1<f64>> =
        (0..m.nrows()).into_par_iter().map(|r| separable_transform(n, sine, m.row(r))).collect();
    let mut out = Array2::zeros(m.raw_dim());
    for (mut o, r) in out.axis_iter_mut(Axis(0)).zip(rows) {
        o.assign(&r);
    }
    out
}

/// Assembled `L = div(a(x / epsilon) grad)` on the interior nodes, stored
/// as the stiffness matrix `K = -h^2 L`.
#[derive(Debug)]
pub struct OperatorHandle {
    epsilon: f64,
    grid: DomainGrid,
    stiffness: CsrMatrix,
    constant: Option<Sym2>,
    bounds: (f64, f64),
    eigen: Mutex<Option<Arc<Eigensystem>>>,
    spectrum: Mutex<Option<Arc<Array1<f64>>>>,
    factors: Mutex<HashMap<u64, Arc<BandedCholesky>>>,
}

/// Assembles the five-point operator. `epsilon` is ignored for the
/// homogenised and constant variants (which report `epsilon = 0`).
pub fn assemble_operator(coef: OperatorCoefficient<'_>, epsilon: f64, grid: DomainGrid) -> Result<OperatorHandle> {
    let m = grid.n() as u64 + 1;
    let (eps, constant, bounds): (f64, Option<Sym2>, (f64, f64)) = match coef {
        OperatorCoefficient::Homogenised(ah) => (0.0, Some(ah.a_hat), ah.a_hat.eigenvalues()),
        OperatorCoefficient::Constant(c) => (0.0, Some(c), c.eigenvalues()),
        OperatorCoefficient::Periodic(a) => {
            if !(epsilon > 0.0 && epsilon <= 1.0) {
                return Err(Error::InvalidScale(format!("epsilon must lie in (0, 1], got {epsilon}")));
            }
            let c = a.constant_value();
            if c.is_none() {
                let denom = (1.0 / epsilon).round();
                if (denom * epsilon - 1.0).abs() > 1e-9 || !is_commensurate(&grid, a, denom as u64) {
                    return Err(Error::InvalidScale(format!(
                        "epsilon = {epsilon} is not commensurate with n = {} and cell resolution {}; admissible: 1/{:?}",
                        grid.n(),
                        a.resolution(),
                        crate::lattice::admissible_denominators(&grid, a)
                    )));
                }
            }
            (epsilon, c, (a.ellipticity_lower(), a.ellipticity_upper()))
        }
    };
    let node = |i: u64, j: u64| -> Sym2 {
        match (constant, coef) {
            (Some(c), _) => c,
            (None, OperatorCoefficient::Periodic(a)) => {
                let denom = (1.0 / eps).round() as u64;
                a.evaluate_rational(i * denom, j * denom, m)
            }
            _ => unreachable!("non-constant coefficient is always periodic"),
        }
    };
    let n = grid.n();
    let interior = |i: u64, j: u64| -> Option<usize> {
        (i >= 1 && j >= 1 && i <= n as u64 && j <= n as u64).then(|| grid.index(i as usize - 1, j as usize - 1))
    };
    let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(9 * n * n);
    let edge = |p: Option<usize>, q: Option<usize>, k: f64, t: &mut Vec<(usize, usize, f64)>| {
        if let Some(p) = p {
            t.push((p, p, k));
        }
        if let Some(q) = q {
            t.push((q, q, k));
        }
        if let (Some(p), Some(q)) = (p, q) {
            t.push((p, q, -k));
            t.push((q, p, -k));
        }
    };
    for j in 0..=m {
        for i in 0..=m {
            let here = node(i, j);
            if i < m && (1..m).contains(&j) {
                let k = harmonic(here.a11, node(i + 1, j).a11);
                edge(interior(i, j), interior(i + 1, j), k, &mut t);
            }
            if j < m && (1..m).contains(&i) {
                let k = harmonic(here.a22, node(i, j + 1).a22);
                edge(interior(i, j), interior(i, j + 1), k, &mut t);
            }
            if i < m && j < m {
                let c = 0.25 * (here.a12 + node(i + 1, j).a12 + node(i, j + 1).a12 + node(i + 1, j + 1).a12);
                if c != 0.0 {
                    let idx = [interior(i, j), interior(i + 1, j), interior(i, j + 1), interior(i + 1, j + 1)];
                    for (r, pr) in idx.iter().enumerate() {
                        for (cc, pc) in idx.iter().enumerate() {
                            if let (Some(pr), Some(pc)) = (pr, pc) {
                                t.push((*pr, *pc, c * cross_block(r, cc)));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(OperatorHandle {
        epsilon: eps,
        grid,
        stiffness: CsrMatrix::from_triplets(n * n, t),
        constant,
        bounds,
        eigen: Mutex::new(None),
        spectrum: Mutex::new(None),
        factors: Mutex::new(HashMap::new()),
    })
}

impl OperatorHandle {
    /// Oscillation scale; 0 for the homogenised or constant operator.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn ellipticity_bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn constant_coefficient(&self) -> Option<Sym2> {
        self.constant
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// `L u`.
    pub fn apply(&self, u: ArrayView1<f64>) -> Array1<f64> {
        let h2 = self.grid.measure();
        self.stiffness.matvec(u).mapv(|v| -v / h2)
    }

    /// Dense `L`.
    pub fn dense(&self) -> Array2<f64> {
        let h2 = self.grid.measure();
        self.stiffness.to_dense().mapv(|v| -v / h2)
    }

    /// `<-L u, u>` with weight `h^2`.
    pub fn energy(&self, u: ArrayView1<f64>) -> f64 {
        u.dot(&self.stiffness.matvec(u))
    }

    pub fn has_eigensystem(&self) -> bool {
        self.constant.is_some_and(|c| c.is_diagonal()) || self.eigen.lock().expect("poisoned").is_some()
    }

    /// Eigensystem, computed at most once. Constant diagonal coefficients use
    /// the analytic sine basis at any size; otherwise `n <= MAX_EIGEN_N`.
    pub fn eigensystem(&self) -> Result<Arc<Eigensystem>> {
        let mut slot = self.eigen.lock().expect("poisoned");
        if let Some(e) = slot.as_ref() {
            return Ok(e.clone());
        }
        let n = self.grid.n();
        let es = match self.constant {
            Some(c) if c.is_diagonal() => {
                let mu = sine_eigenvalues(n, self.grid.h());
                let values = Array1::from_shape_fn(n * n, |k| c.a11 * mu[k % n] + c.a22 * mu[k / n]);
                Eigensystem { values, basis: ModalBasis::Separable { n, sine: sine_basis(n) } }
            }
            _ => {
                if n > MAX_EIGEN_N {
                    return Err(Error::Unsupported(format!(
                        "dense eigendecomposition limited to n <= {MAX_EIGEN_N}, got n = {n}"
                    )));
                }
                let (values, vectors) = sym_eigen(&self.dense())?;
                if let Some(l) = values.iter().find(|l| !(**l < 0.0)) {
                    return Err(Error::NumericalFailure(format!("operator has non-negative eigenvalue {l}")));
                }
                Eigensystem { values, basis: ModalBasis::Dense(vectors) }
            }
        };
        let es = Arc::new(es);
        *slot = Some(es.clone());
        Ok(es)
    }

    /// Eigenvalues only; reuses the eigensystem when present.
    pub fn eigenvalues(&self) -> Result<Arc<Array1<f64>>> {
        if self.has_eigensystem() {
            return Ok(Arc::new(self.eigensystem()?.values.clone()));
        }
        let mut slot = self.spectrum.lock().expect("poisoned");
        if let Some(v) = slot.as_ref() {
            return Ok(v.clone());
        }
        if self.grid.n() > MAX_EIGEN_N {
            return Err(Error::Unsupported(format!(
                "dense eigenvalues limited to n <= {MAX_EIGEN_N}, got n = {}",
                self.grid.n()
            )));
        }
        let v = Arc::new(sym_eigenvalues(&self.dense())?);
        *slot = Some(v.clone());
        Ok(v)
    }

    /// Banded Cholesky factor of `I - dt L`, memoised per `dt`.
    pub fn implicit_factor(&self, dt: f64) -> Result<Arc<BandedCholesky>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidStep(format!("time step must be positive, got {dt}")));
        }
        let mut cache = self.factors.lock().expect("poisoned");
        if let Some(f) = cache.get(&dt.to_bits()) {
            return Ok(f.clone());
        }
        let f = Arc::new(BandedCholesky::factor(&self.stiffness, 1.0, dt / self.grid.measure())?);
        cache.insert(dt.to_bits(), f.clone());
        Ok(f)
    }

    /// `(I - dt L)^{-1} rhs`.
    pub fn solve_implicit(&self, dt: f64, rhs: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.implicit_factor(dt)?.solve(rhs)
    }

    fn check_grid(&self, g: &DomainGrid) -> Result<()> {
        if g != &self.grid {
            return Err(Error::GridMismatch(format!("operator on n = {}, field on n = {}", self.grid.n(), g.n())));
        }
        Ok(())
    }

    fn semigroup_values(&self, t: f64, f: ArrayView1<f64>) -> Result<Array1<f64>> {
        if t == 0.0 {
            return Ok(f.to_owned());
        }
        if self.has_eigensystem() || self.grid.n() <= AUTO_EIGEN_N {
            let es = self.eigensystem()?;
            return Ok(es.apply_function(f, |l| (t * l).exp()));
        }
        self.crank_nicolson(t, f)
    }

    /// Crank-Nicolson with four implicit-Euler half steps at the start to
    /// damp the stiff modes of rough data.
    fn crank_nicolson(&self, t: f64, f: ArrayView1<f64>) -> Result<Array1<f64>> {
        let steps = ((t / 1e-3).ceil() as usize).clamp(8, 100_000);
        let dt = t / steps as f64;
        let factor = self.implicit_factor(0.5 * dt)?;
        let mut u = f.to_owned();
        for _ in 0..4 {
            u = factor.solve(u.view())?;
        }
        for _ in 2..steps {
            let rhs = &u + &(self.apply(u.view()) * (0.5 * dt));
            u = factor.solve(rhs.view())?;
        }
        Ok(u)
    }
}

/// `e^{tL} f`.
pub fn apply_semigroup(l: &OperatorHandle, t: f64, f: &ScalarField) -> Result<ScalarField> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidTime(format!("semigroup time must be non-negative, got {t}")));
    }
    l.check_grid(f.grid())?;
    if t == 0.0 {
        return Ok(f.clone());
    }
    let v = l.semigroup_values(t, f.values().view())?;
    let out = ScalarField::from_values(*f.grid(), v)?;
    Ok(match f.time() {
        Some(s) => out.with_time(s + t),
        None => out,
    })
}

/// `e^{t L} f` at every `t` in `times` (non-decreasing, from 0).
pub fn semigroup_path(l: &OperatorHandle, f: &ScalarField, times: &[f64]) -> Result<Vec<Array1<f64>>> {
    l.check_grid(f.grid())?;
    if times.first().is_some_and(|t| *t < 0.0) || times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidTime("times must be non-negative and non-decreasing".into()));
    }
    if l.has_eigensystem() || l.grid.n() <= AUTO_EIGEN_N {
        let es = l.eigensystem()?;
        let c = es.to_modal(f.values().view());
        let coeffs = Array2::from_shape_fn((times.len(), c.len()), |(r, k)| c[k] * (times[r] * es.values[k]).exp());
        let rows = es.from_modal_rows(&coeffs);
        return Ok(times
            .iter()
            .zip(rows.outer_iter())
            .map(|(t, r)| if *t == 0.0 { f.values().clone() } else { r.to_owned() })
            .collect());
    }
    let mut out = Vec::with_capacity(times.len());
    let mut cur = f.values().clone();
    let mut last = 0.0;
    for &t in times {
        if t > last {
            cur = l.semigroup_values(t - last, cur.view())?;
            last = t;
        }
        out.push(cur.clone());
    }
    Ok(out)
}

/// Heat kernel `G(t; ., y)` for source node `y`.
#[derive(Clone, Debug)]
pub struct GreenColumn {
    pub t: f64,
    pub source: usize,
    pub values: ScalarField,
}

impl GreenColumn {
    pub fn mass(&self) -> f64 {
        self.values.integral()
    }
}

pub fn green_column(l: &OperatorHandle, t: f64, y: usize) -> Result<GreenColumn> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidTime(format!("green function needs t > 0, got {t}")));
    }
    let g = l.grid;
    if y >= g.len() {
        return Err(Error::OutOfDomain(format!("node {y} on a grid with {} nodes", g.len())));
    }
    let values = if l.has_eigensystem() || g.n() <= AUTO_EIGEN_N {
        let es = l.eigensystem()?;
        let mut c = es.node_column(y);
        c.iter_mut().zip(es.values.iter()).for_each(|(c, &lam)| *c *= (t * lam).exp() / g.measure());
        es.from_modal(c.view())
    } else {
        let mut d = Array1::zeros(g.len());
        d[y] = 1.0 / g.measure();
        l.crank_nicolson(t, d.view())?
    };
    Ok(GreenColumn { t, source: y, values: ScalarField::from_values(g, values)?.with_time(t) })
}

/// Operator-norm estimate from power iteration.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// `|| e^{t L_eps} - e^{t L_0} ||_{L^2 -> L^2}` by power iteration on the
/// square of the (symmetric) difference.
pub fn semigroup_difference_norm(l_eps: &OperatorHandle, l_0: &OperatorHandle, t: f64) -> Result<NormEstimate> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidTime(format!("need t > 0, got {t}")));
    }
    if l_eps.grid != l_0.grid {
        return Err(Error::GridMismatch("operators live on different grids".into()));
    }
    let diff = |v: ArrayView1<f64>| -> Result<Array1<f64>> {
        Ok(l_eps.semigroup_values(t, v)? - l_0.semigroup_values(t, v)?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Array1::from_shape_fn(l_0.grid.len(), |_| StandardNormal.sample(&mut rng));
    let norm = |x: &Array1<f64>| x.dot(x).sqrt();
    v /= norm(&v);
    let mut est = 0.0f64;
    for it in 1..=POWER_BUDGET {
        let w = diff(diff(v.view())?.view())?;
        let nw = norm(&w);
        if nw == 0.0 || !nw.is_finite() {
            return Ok(NormEstimate { value: 0.0, converged: nw == 0.0, iterations: it });
        }
        let next = nw.sqrt();
        v = w / nw;
        if (next - est).abs() <= POWER_TOL * next {
            return Ok(NormEstimate { value: next, converged: true, iterations: it });
        }
        est = next;
    }
    Ok(NormEstimate { value: est, converged: false, iterations: POWER_BUDGET })
}

/// One `(epsilon, t)` row of [`verify_green_bounds`].
#[derive(Clone, Debug, Serialize)]
pub struct GreenBoundRow {
    pub epsilon: f64,
    pub t: f64,
    pub pointwise_stat: f64,
    pub gradient_stat: f64,
    pub difference_stat: f64,
    pub semigroup_diff_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenBoundReport {
    pub rows: Vec<GreenBoundRow>,
    pub sources: Vec<usize>,
    /// Times dropped because they exceed the diameter of the square.
    pub excluded_times: Vec<f64>,
}

impl GreenBoundReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,t,pointwise_stat,gradient_stat,difference_stat,semigroup_diff_norm\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.10e},{:.10e},{:.10e},{:.10e}\n",
                r.epsilon, r.t, r.pointwise_stat, r.gradient_stat, r.difference_stat, r.semigroup_diff_norm
            ));
        }
        s
    }
}

/// Centre and the four quarter points.
pub fn default_sources(grid: &DomainGrid) -> Vec<usize> {
    let n = grid.n();
    let q = |f: f64| ((f * (n + 1) as f64).round() as usize).clamp(1, n) - 1;
    let mut s = vec![grid.index(q(0.5), q(0.5))];
    for (a, b) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
        s.push(grid.index(q(a), q(b)));
    }
    s.dedup();
    s
}

/// Weighted suprema of the heat kernels and of their differences to the
/// homogenised kernel across an `(epsilon, t)` ladder.
pub fn verify_green_bounds(l_eps: &[&OperatorHandle], l_0: &OperatorHandle, t_ladder: &[f64]) -> Result<GreenBoundReport> {
    if l_eps.is_empty() || t_ladder.is_empty() {
        return Err(Error::InsufficientData("empty epsilon or time ladder".into()));
    }
    let g = l_0.grid;
    let diam = std::f64::consts::SQRT_2;
    let (times, excluded): (Vec<f64>, Vec<f64>) = t_ladder.iter().partition(|&&t| t < diam);
    let sources = default_sources(&g);
    let h = g.h();
    let n = g.n();
    let mut rows = Vec::new();
    for &t in &times {
        let g0: Vec<GreenColumn> = sources.iter().map(|&y| green_column(l_0, t, y)).collect::<Result<_>>()?;
        for l in l_eps {
            l.check_grid(&g)?;
            let (mut pw, mut gr, mut df) = (0.0f64, 0.0f64, 0.0f64);
            for (col0, &y) in g0.iter().zip(&sources) {
                let ge = green_column(l, t, y)?;
                let (yx, yy) = g.coords(y);
                let dist = |k: usize| {
                    let (x1, x2) = g.coords(k);
                    ((x1 - yx).powi(2) + (x2 - yy).powi(2)).sqrt()
                };
                let v = ge.values.values();
                let v0 = col0.values.values();
                for k in 0..g.len() {
                    let w = t.sqrt() + dist(k);
                    pw = pw.max(v[k].abs() * w * w);
                    df = df.max((v[k] - v0[k]).abs() * w.powi(3));
                    let (i, j) = g.ij(k);
                    let right = if i + 1 < n { v[k + 1] } else { 0.0 };
                    let up = if j + 1 < n { v[k + n] } else { 0.0 };
                    let grad = ((right - v[k]).powi(2) + (up - v[k]).powi(2)).sqrt() / h;
                    gr = gr.max(grad * w.powi(3));
                }
            }
            let eps = l.epsilon;
            let sd = semigroup_difference_norm(l, l_0, t)?.value;
            rows.push(GreenBoundRow {
                epsilon: eps,
                t,
                pointwise_stat: pw,
                gradient_stat: gr,
                difference_stat: if eps > 0.0 { df / eps.sqrt() } else { df },
                semigroup_diff_norm: sd,
            });
        }
    }
    Ok(GreenBoundReport { rows, sources, excluded_times: excluded })
}

/// `sum_edges (du)^2`, including edges to the zero boundary.
pub fn gradient_energy(grid: &DomainGrid, u: ArrayView1<f64>) -> f64 {
    let n = grid.n();
    let um = u.to_owned().into_shape_with_order((n, n)).expect("square field");
    let mut terms = Vec::with_capacity(2 * (n + 1) * n);
    for j in 0..n {
        let row = um.slice(s![j, ..]);
        let col = um.slice(s![.., j]);
        terms.push(row[0] * row[0]);
        terms.push(row[n - 1] * row[n - 1]);
        terms.push(col[0] * col[0]);
        terms.push(col[n - 1] * col[n - 1]);
        for i in 0..n - 1 {
            terms.push((row[i + 1] - row[i]).powi(2));
            terms.push((col[i + 1] - col[i]).powi(2));
        }
    }
    pairwise_sum(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::homogenise;
    use crate::lattice::{build_domain_grid, make_coefficient, make_coefficient_at, CoefficientSpec};
    use crate::linalg::sym_eigen;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn laminate() -> PeriodicCoefficient {
        make_coefficient(&CoefficientSpec::Laminate { axis: 1, low: 1.0, high: 4.0 }).unwrap()
    }

    fn identity() -> PeriodicCoefficient {
        make_coefficient(&CoefficientSpec::Constant { matrix: Sym2::IDENTITY }).unwrap()
    }

    fn random_field(grid: DomainGrid, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_values(grid, Array1::from_shape_fn(grid.len(), |_| StandardNormal.sample(&mut rng))).unwrap()
    }

    #[test]
    fn identity_gives_five_point_laplacian() {
        let g = build_domain_grid(5).unwrap();
        let a = identity();
        let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.5, g).unwrap();
        let d = l.dense();
        let h2 = g.measure();
        let k = g.index(2, 2);
        assert_abs_diff_eq!(d[[k, k]] * h2, -4.0, epsilon = 1e-12);
        for nb in [g.index(1, 2), g.index(3, 2), g.index(2, 1), g.index(2, 3)] {
            assert_abs_diff_eq!(d[[k, nb]] * h2, 1.0, epsilon = 1e-12);
        }
        assert_eq!(d.row(k).iter().filter(|v| **v != 0.0).count(), 5);
        assert!(l.stiffness().is_symmetric(0.0));
    }

    #[test]
    fn homogenised_stencil_is_anisotropic() {
        let g = build_domain_grid(7).unwrap();
        let ah = HomogenisedMatrix { a_hat: Sym2::diag(1.6, 2.5), asymmetry: 0.0 };
        let l = assemble_operator(OperatorCoefficient::Homogenised(&ah), 0.0, g).unwrap();
        assert_eq!(l.epsilon(), 0.0);
        let d = l.dense();
        let h2 = g.measure();
        let k = g.index(3, 3);
        assert_abs_diff_eq!(d[[k, k]] * h2, -2.0 * (1.6 + 2.5), epsilon = 1e-12);
        assert_abs_diff_eq!(d[[k, k + 1]] * h2, 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(d[[k, k + 7]] * h2, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn incommensurate_scale_rejected() {
        let g = build_domain_grid(63).unwrap();
        let a = laminate();
        assert!(matches!(
            assemble_operator(OperatorCoefficient::Periodic(&a), 1.0 / 3.0, g),
            Err(Error::InvalidScale(_))
        ));
        assert!(assemble_operator(OperatorCoefficient::Periodic(&a), 1.0 / 8.0, g).is_ok());
    }

    #[test]
    fn separable_eigensystem_matches_dense() {
        let g = build_domain_grid(6).unwrap();
        let l = assemble_operator(OperatorCoefficient::Constant(Sym2::diag(1.6, 2.5)), 0.0, g).unwrap();
        let es = l.eigensystem().unwrap();
        assert!(es.is_separable());
        let (w, _) = sym_eigen(&l.dense()).unwrap();
        let mut sep: Vec<f64> = es.values().to_vec();
        sep.sort_by(f64::total_cmp);
        for (a, b) in sep.iter().zip(w.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9 * b.abs());
        }
        let f = random_field(g, 3);
        let back = es.from_modal(es.to_modal(f.values().view()).view());
        for (a, b) in back.iter().zip(f.values().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let lf = l.apply(f.values().view());
        let lf2 = es.apply_function(f.values().view(), |x| x);
        for (a, b) in lf.iter().zip(lf2.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn semigroup_on_leading_mode() {
        let g = build_domain_grid(15).unwrap();
        let a = identity();
        let l = assemble_operator(OperatorCoefficient::Periodic(&a), 1.0, g).unwrap();
        let (w, v) = sym_eigen(&l.dense()).unwrap();
        let lead = w.len() - 1;
        let f = ScalarField::from_values(g, v.row(lead).to_owned()).unwrap();
        assert_eq!(apply_semigroup(&l, 0.0, &f).unwrap(), f);
        let t = 0.05;
        let out = apply_semigroup(&l, t, &f).unwrap();
        for (a, b) in out.values().iter().zip(f.values().iter()) {
            assert_abs_diff_eq!(*a, b * (t * w[lead]).exp(), epsilon = 1e-12);
        }
        assert!(matches!(apply_semigroup(&l, -1.0, &f), Err(Error::InvalidTime(_))));
    }

    #[test]
    fn long_time_decay() {
        let g = build_domain_grid(7).unwrap();
        let a = laminate();
        let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.5, g).unwrap();
        let f = random_field(g, 1);
        let out = apply_semigroup(&l, 1e3, &f).unwrap();
        assert!(out.values().dot(out.values()).sqrt() <= 1e-6 * f.values().dot(f.values()).sqrt());
    }

    #[test]
    fn crank_nicolson_matches_eigen_path() {
        let g = build_domain_grid(15).unwrap();
        let a = laminate();
        let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.5, g).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).sin());
        let exact = l.semigroup_values(0.1, f.values().view()).unwrap();
        let cn = l.crank_nicolson(0.1, f.values().view()).unwrap();
        let err = (&exact - &cn).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn green_symmetry_mass_and_peak() {
        let g = build_domain_grid(31).unwrap();
        for spec in [
            CoefficientSpec::Constant { matrix: Sym2::IDENTITY },
            CoefficientSpec::Laminate { axis: 1, low: 1.0, high: 4.0 },
            CoefficientSpec::SmoothChecker { contrast: 4.0 },
        ] {
            let a = make_coefficient_at(&spec, 32).unwrap();
            let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.5, g).unwrap();
            for t in [0.005, 0.05, 0.5] {
                let (x, y) = (g.index(10, 20), g.index(22, 7));
                let gx = green_column(&l, t, x).unwrap();
                let gy = green_column(&l, t, y).unwrap();
                let a1 = gx.values.values()[y];
                let a2 = gy.values.values()[x];
                assert!((a1 - a2).abs() <= 1e-10 * a1.abs().max(a2.abs()).max(1e-300));
                assert!(gx.mass() <= 1.0 + 1e-8);
                let max = gx.values.sup();
                assert!(gx.values.values().iter().all(|v| *v >= -1e-10 * max));
            }
        }
        let a = identity();
        let l = assemble_operator(OperatorCoefficient::Periodic(&a), 1.0, g).unwrap();
        let t = 0.002;
        let c = green_column(&l, t, g.index(15, 15)).unwrap();
        let free = 1.0 / (4.0 * std::f64::consts::PI * t);
        assert!((c.values.sup() / free - 1.0).abs() < 0.2);
        assert!(matches!(green_column(&l, 0.0, 0), Err(Error::InvalidTime(_))));
    }

    #[test]
    fn difference_norm_limits() {
        let g = build_domain_grid(15).unwrap();
        let a = identity();
        let le = assemble_operator(OperatorCoefficient::Periodic(&a), 0.25, g).unwrap();
        let l0 = assemble_operator(OperatorCoefficient::Constant(Sym2::IDENTITY), 0.0, g).unwrap();
        let z = semigroup_difference_norm(&le, &l0, 0.25).unwrap();
        assert!(z.value < 1e-12);

        let lam = laminate();
        let ah = homogenise(&lam, 1e-12).unwrap().0;
        let l0 = assemble_operator(OperatorCoefficient::Homogenised(&ah), 0.0, g).unwrap();
        let le = assemble_operator(OperatorCoefficient::Periodic(&lam), 0.25, g).unwrap();
        let big = semigroup_difference_norm(&le, &l0, 0.01).unwrap();
        assert!(big.converged && big.value > 1e-3);
        assert!(semigroup_difference_norm(&le, &l0, 50.0).unwrap().value < 1e-8);
    }

    #[test]
    fn constant_coefficient_green_differences_vanish() {
        let g = build_domain_grid(15).unwrap();
        let a = identity();
        let le = assemble_operator(OperatorCoefficient::Periodic(&a), 0.25, g).unwrap();
        let l0 = assemble_operator(OperatorCoefficient::Constant(Sym2::IDENTITY), 0.0, g).unwrap();
        let r = verify_green_bounds(&[&le], &l0, &[0.01, 0.1, 2.0]).unwrap();
        assert_eq!(r.excluded_times, vec![2.0]);
        assert_eq!(r.rows.len(), 2);
        for row in &r.rows {
            assert!(row.difference_stat < 1e-10);
            assert!(row.pointwise_stat > 0.0);
        }
        assert!(r.to_csv().starts_with("epsilon,t,pointwise_stat"));
    }

    #[test]
    fn factor_cache_is_memoised() {
        let g = build_domain_grid(7).unwrap();
        let l = assemble_operator(OperatorCoefficient::Constant(Sym2::IDENTITY), 0.0, g).unwrap();
        let f1 = l.implicit_factor(0.01).unwrap();
        let f2 = l.implicit_factor(0.01).unwrap();
        assert!(Arc::ptr_eq(&f1, &f2));
        assert!(matches!(l.implicit_factor(0.0), Err(Error::InvalidStep(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn semigroup_property_and_decay(seed in 0u64..1000, preset in 0usize..3) {
            let g = build_domain_grid(11).unwrap();
            let specs = [
                CoefficientSpec::Constant { matrix: Sym2::new(1.5, 0.3, 1.0) },
                CoefficientSpec::Laminate { axis: 2, low: 1.0, high: 4.0 },
                CoefficientSpec::SmoothChecker { contrast: 6.0 },
            ];
            let a = make_coefficient_at(&specs[preset], 12).unwrap();
            let eps = if preset == 0 { 1.0 } else { 0.5 };
            let l = assemble_operator(OperatorCoefficient::Periodic(&a), eps, g).unwrap();
            let f = random_field(g, seed);
            let nf = f.values().dot(f.values()).sqrt();
            for (s, t) in [(0.1, 0.3), (0.3, 0.1), (0.1, 0.1), (0.3, 0.3)] {
                let lhs = apply_semigroup(&l, s + t, &f).unwrap();
                let rhs = apply_semigroup(&l, s, &apply_semigroup(&l, t, &f).unwrap()).unwrap();
                let d = lhs.sub(&rhs).unwrap();
                prop_assert!(d.values().dot(d.values()).sqrt() <= 1e-8 * nf);
            }
            let mut last = nf;
            for t in [0.001, 0.01, 0.05, 0.2] {
                let u = apply_semigroup(&l, t, &f).unwrap();
                let nu = u.values().dot(u.values()).sqrt();
                prop_assert!(nu <= last * (1.0 + 1e-12));
                last = nu;
            }
        }

        #[test]
        fn coercivity(seed in 0u64..1000, preset in 0usize..3) {
            let g = build_domain_grid(16).unwrap();
            let specs = [
                CoefficientSpec::Laminate { axis: 1, low: 1.0, high: 4.0 },
                CoefficientSpec::SmoothChecker { contrast: 6.0 },
                CoefficientSpec::Constant { matrix: Sym2::new(2.0, 0.4, 1.0) },
            ];
            let a = make_coefficient_at(&specs[preset], 16).unwrap();
            let l = assemble_operator(OperatorCoefficient::Periodic(&a), 1.0 / 17.0, g).unwrap();
            let u = random_field(g, seed);
            let q = l.energy(u.values().view()) / gradient_energy(&g, u.values().view());
            let (lo, hi) = l.ellipticity_bounds();
            prop_assert!(q >= lo * 0.95 && q <= hi * 1.05, "q = {q}, bounds ({lo}, {hi})");
        }
    }
}
