//! Negative Hölder norms estimated with rescaled bumps, plus discrete
//! Besov and Sobolev–Slobodeckij norms for checking interpolation
//! inequalities on the grid.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{DomainGrid, ScalarField};
use crate::linalg::pairwise_sum;

/// Radial mother bump `exp(1 - 1 / (1 - |z|^2))` on the unit disc, with
/// `phi(0) = 1`.
pub fn mother(z: [f64; 2]) -> f64 {
    let r2 = z[0] * z[0] + z[1] * z[1];
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// `int phi` over the plane.
pub fn mother_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        // 2 pi int_0^1 phi(r) r dr by composite Simpson.
        let m = 4096;
        let step = 1.0 / m as f64;
        let acc: f64 = (0..=m)
            .map(|k| {
                let r = k as f64 * step;
                let c = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                c * r * mother([r, 0.0])
            })
            .sum();
        2.0 * std::f64::consts::PI * acc * step / 3.0
    })
}

/// Dyadic scales with admissible centres for each.
#[derive(Clone, Debug)]
pub struct TestFamily {
    pub id: String,
    grid: DomainGrid,
    scales: Vec<f64>,
    centres: Vec<Vec<usize>>,
}

/// Smallest scale the default family resolves, in grid steps.
pub const MIN_SCALE_STEPS: f64 = 4.0;

impl TestFamily {
    /// `lambda in {1/2, 1/4, ...}` down to the smallest `lambda >= 4h`, centres
    /// on a `lambda / 2` lattice snapped to nodes.
    pub fn dyadic(grid: DomainGrid) -> Self {
        let floor = MIN_SCALE_STEPS * grid.h();
        let scales: Vec<f64> = (1..).map(|j| 0.5f64.powi(j)).take_while(|l| *l >= floor - 1e-12).collect();
        let mut fam = Self::with_scales(grid, &scales).expect("dyadic scales are admissible");
        // Off-lattice resolutions may have no node exactly at distance >= 1/2 from the boundary.
        let keep: Vec<bool> = fam.centres.iter().map(|c| !c.is_empty()).collect();
        let mut it = keep.iter();
        fam.scales.retain(|_| *it.next().unwrap());
        fam.centres.retain(|c| !c.is_empty());
        fam.id = format!("bump-n{}-j{}", grid.n(), fam.scales.len());
        fam
    }

    pub fn with_scales(grid: DomainGrid, scales: &[f64]) -> Result<Self> {
        let h = grid.h();
        let n = grid.n();
        let mut centres = Vec::with_capacity(scales.len());
        for &lambda in scales {
            if !(lambda > 0.0 && lambda <= 0.5) {
                return Err(Error::InvalidScale(format!("test scale must lie in (0, 1/2], got {lambda}")));
            }
            let inside = |i: usize| {
                let x = (i + 1) as f64 * h;
                x >= lambda - 1e-12 && x <= 1.0 - lambda + 1e-12
            };
            let mut axis: Vec<usize> = Vec::new();
            let count = (1.0 / (0.5 * lambda)).round() as usize;
            for k in 0..=count {
                let c = k as f64 * 0.5 * lambda;
                let raw = (c / h).round() as i64 - 1;
                if raw < 0 || raw >= n as i64 {
                    continue;
                }
                let mut i = raw as usize;
                if !inside(i) {
                    // Snap inward by one node when rounding crossed the margin.
                    let x = (i + 1) as f64 * h;
                    i = if x < 0.5 { i + 1 } else { i.wrapping_sub(1) };
                    if i >= n || !inside(i) {
                        continue;
                    }
                }
                if axis.last() != Some(&i) {
                    axis.push(i);
                }
            }
            let list: Vec<usize> = axis.iter().flat_map(|&j| axis.iter().map(move |&i| grid.index(i, j))).collect();
            centres.push(list);
        }
        let id = format!("bump-n{}-j{}", n, scales.len());
        Ok(Self { id, grid, scales: scales.to_vec(), centres })
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn centres(&self, scale: usize) -> &[usize] {
        &self.centres[scale]
    }

    pub fn len(&self) -> usize {
        self.centres.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lambda_min(&self) -> f64 {
        self.scales.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn lambda_max(&self) -> f64 {
        self.scales.iter().copied().fold(0.0, f64::max)
    }
}

/// Values of `phi^lambda_0` on the node offsets `|di|, |dj| <= m`.
struct Stencil {
    m: i64,
    weights: Vec<f64>,
}

impl Stencil {
    fn new(h: f64, lambda: f64) -> Self {
        let m = (lambda / h).floor() as i64;
        let side = (2 * m + 1) as usize;
        let mut weights = vec![0.0; side * side];
        for dj in -m..=m {
            for di in -m..=m {
                let z = [di as f64 * h / lambda, dj as f64 * h / lambda];
                weights[((dj + m) as usize) * side + (di + m) as usize] = mother(z) / (lambda * lambda);
            }
        }
        Self { m, weights }
    }

    fn pair(&self, f: &ScalarField, centre: usize) -> f64 {
        let g = f.grid();
        let n = g.n() as i64;
        let (ci, cj) = g.ij(centre);
        let side = (2 * self.m + 1) as usize;
        let v = f.values();
        let mut acc = 0.0;
        for dj in -self.m..=self.m {
            let j = cj as i64 + dj;
            if j < 0 || j >= n {
                continue;
            }
            let row = ((dj + self.m) as usize) * side;
            for di in -self.m..=self.m {
                let i = ci as i64 + di;
                if i < 0 || i >= n {
                    continue;
                }
                acc += self.weights[row + (di + self.m) as usize] * v[(j * n + i) as usize];
            }
        }
        acc * g.measure()
    }
}

/// `<f, phi^lambda_x>` by nodal quadrature.
pub fn pair_with_test(f: &ScalarField, centre: usize, lambda: f64) -> Result<f64> {
    let g = f.grid();
    if centre >= g.len() {
        return Err(Error::OutOfDomain(format!("node {centre} outside a grid of {} nodes", g.len())));
    }
    let (x, y) = g.coords(centre);
    let margin = x.min(y).min(1.0 - x).min(1.0 - y);
    if !(lambda > 0.0) || margin < lambda - 1e-12 {
        return Err(Error::OutOfDomain(format!(
            "support of radius {lambda} around ({x}, {y}) leaves the domain"
        )));
    }
    Ok(Stencil::new(g.h(), lambda).pair(f, centre))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BesovEstimate {
    pub alpha: f64,
    pub value: f64,
    /// Maximising centre node and scale.
    pub argmax: (usize, f64),
    pub family_id: String,
}

impl BesovEstimate {
    pub const CSV_HEADER: &'static str = "alpha,value,argmax_x,argmax_lambda,family_id";

    pub fn csv_row(&self) -> String {
        format!("{},{:.17e},{},{},{}", self.alpha, self.value, self.argmax.0, self.argmax.1, self.family_id)
    }
}

/// `max lambda^{-alpha} |<f, phi^lambda_x>|` over the family.
pub fn neg_holder_norm(f: &ScalarField, alpha: f64, family: &TestFamily) -> Result<BesovEstimate> {
    if !(alpha < 0.0) {
        return Err(Error::InvalidExponent(format!("expected a negative exponent, got {alpha}")));
    }
    f.grid().check_same(family.grid())?;
    let mut best: Option<(f64, usize, f64)> = None;
    for (s, &lambda) in family.scales.iter().enumerate() {
        let stencil = Stencil::new(family.grid.h(), lambda);
        let w = lambda.powf(-alpha);
        let vals: Vec<f64> = family.centres[s].par_iter().map(|&c| w * stencil.pair(f, c).abs()).collect();
        for (k, v) in vals.into_iter().enumerate() {
            if best.is_none_or(|b| v > b.0) {
                best = Some((v, family.centres[s][k], lambda));
            }
        }
    }
    let (value, x, lambda) = best.ok_or(Error::EmptyFamily)?;
    Ok(BesovEstimate { alpha, value, argmax: (x, lambda), family_id: family.id.clone() })
}

/// Node value with zero extension to the whole lattice.
fn ext(f: &ScalarField, i: i64, j: i64) -> f64 {
    let n = f.grid().n() as i64;
    if i < 0 || j < 0 || i >= n || j >= n {
        0.0
    } else {
        f.values()[(j * n + i) as usize]
    }
}

pub fn l1_norm(f: &ScalarField) -> f64 {
    let a: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    pairwise_sum(&a) * f.grid().measure()
}

pub fn lq_norm(f: &ScalarField, q: f64) -> f64 {
    let a: Vec<f64> = f.values().iter().map(|v| v.abs().powf(q)).collect();
    (pairwise_sum(&a) * f.grid().measure()).powf(1.0 / q)
}

/// Forward-difference gradient magnitudes on the zero-extended lattice,
/// one per cell with at least one interior corner.
fn gradient_magnitudes(f: &ScalarField) -> Vec<f64> {
    let n = f.grid().n() as i64;
    let h = f.grid().h();
    let mut out = Vec::with_capacity(((n + 1) * (n + 1)) as usize);
    for j in -1..n {
        for i in -1..n {
            let c = ext(f, i, j);
            let dx = (ext(f, i + 1, j) - c) / h;
            let dy = (ext(f, i, j + 1) - c) / h;
            out.push(dx.hypot(dy));
        }
    }
    out
}

pub fn gradient_l1(f: &ScalarField) -> f64 {
    pairwise_sum(&gradient_magnitudes(f)) * f.grid().measure()
}

pub fn gradient_lq(f: &ScalarField, q: f64) -> f64 {
    let a: Vec<f64> = gradient_magnitudes(f).iter().map(|v| v.powf(q)).collect();
    (pairwise_sum(&a) * f.grid().measure()).powf(1.0 / q)
}

pub fn gradient_linf(f: &ScalarField) -> f64 {
    gradient_magnitudes(f).into_iter().fold(0.0, f64::max)
}

/// `||f(. + s h e_k) - f||_{L^1}` summed over both axes, zero extension.
fn shift_difference_l1(f: &ScalarField, s: i64) -> f64 {
    let n = f.grid().n() as i64;
    let mut a = Vec::with_capacity(((n + s) * n * 2) as usize);
    for j in 0..n {
        for i in -s..n {
            a.push((ext(f, i + s, j) - ext(f, i, j)).abs());
        }
    }
    for j in -s..n {
        for i in 0..n {
            a.push((ext(f, i, j + s) - ext(f, i, j)).abs());
        }
    }
    pairwise_sum(&a) * f.grid().measure()
}

/// `||f||_{L^1} + sum_j r_j^{-alpha} ||Delta_{r_j} f||_{L^1}` over dyadic
/// shifts `r_j = 2^j h <= 1/2`, a discrete `B^alpha_{1,1}` norm for
/// `0 < alpha < 1`.
pub fn besov_b11(f: &ScalarField, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidExponent(format!("B11 exponent must lie in (0, 1), got {alpha}")));
    }
    let h = f.grid().h();
    let mut acc = l1_norm(f);
    let mut s = 1i64;
    while s as f64 * h <= 0.5 + 1e-12 {
        acc += (s as f64 * h).powf(-alpha) * shift_difference_l1(f, s);
        s *= 2;
    }
    Ok(acc)
}

/// Sobolev–Slobodeckij seminorm `[f]_{s,q}` over `D x D`. Offsets longer
/// than `max_offset` grid steps (Chebyshev distance) are dropped.
pub fn gagliardo_seminorm(f: &ScalarField, s: f64, q: f64, max_offset: Option<usize>) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) || !(q >= 1.0) {
        return Err(Error::InvalidExponent(format!("need 0 < s < 1 and q >= 1, got s = {s}, q = {q}")));
    }
    let g = f.grid();
    let n = g.n() as i64;
    let h = g.h();
    let reach = max_offset.map_or(n - 1, |m| (m as i64).min(n - 1));
    // Half plane of offsets; the other half contributes the same.
    let offsets: Vec<(i64, i64)> = (0..=reach)
        .flat_map(|dj| (-reach..=reach).map(move |di| (di, dj)))
        .filter(|&(di, dj)| dj > 0 || di > 0)
        .collect();
    let integer_q = (q.fract() == 0.0 && q <= 32.0).then_some(q as i32);
    let v = f.values();
    let terms: Vec<f64> = offsets
        .par_iter()
        .map(|&(di, dj)| {
            let r = h * ((di * di + dj * dj) as f64).sqrt();
            let kernel = r.powf(-2.0 - s * q);
            let mut acc = Vec::with_capacity(((n - di.abs()) * (n - dj)) as usize);
            for j in 0..n - dj {
                for i in (-di).max(0)..(n - di).min(n) {
                    let d = (v[((j + dj) * n + i + di) as usize] - v[(j * n + i) as usize]).abs();
                    acc.push(match integer_q {
                        Some(k) => d.powi(k),
                        None => d.powf(q),
                    });
                }
            }
            kernel * pairwise_sum(&acc)
        })
        .collect();
    Ok((2.0 * pairwise_sum(&terms) * g.measure() * g.measure()).powf(1.0 / q))
}

/// `||f||_{L^q} + [f]_{s,q}`.
pub fn sobolev_norm(f: &ScalarField, s: f64, q: f64, max_offset: Option<usize>) -> Result<f64> {
    Ok(lq_norm(f, q) + gagliardo_seminorm(f, s, q, max_offset)?)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct InequalityRow {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, and 0 when both sides vanish.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub rows: Vec<InequalityRow>,
    pub max_constant: f64,
}

impl InequalityReport {
    fn from_pairs(pairs: Vec<(f64, f64)>) -> Self {
        let rows: Vec<InequalityRow> = pairs
            .into_iter()
            .map(|(lhs, rhs)| {
                let ratio = if lhs == 0.0 && rhs == 0.0 { 0.0 } else { lhs / rhs };
                InequalityRow { lhs, rhs, ratio }
            })
            .collect();
        let max_constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        Self { rows, max_constant }
    }
}

/// `||f||_{B^alpha_{1,1}}` against `||grad f||_{L^1}^alpha ||f||_{L^1}^{1-alpha} + ||f||_{L^1}`.
pub fn verify_b11_interpolation(samples: &[ScalarField], alpha: f64) -> Result<InequalityReport> {
    let pairs = samples
        .iter()
        .map(|f| {
            let l1 = l1_norm(f);
            let rhs = gradient_l1(f).powf(alpha) * l1.powf(1.0 - alpha) + l1;
            Ok((besov_b11(f, alpha)?, rhs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InequalityReport::from_pairs(pairs))
}

/// `||f||_{W^{alpha,q}}` against `||f||_{W^{1,q}}^alpha ||f||_{L^q}^{1-alpha}`.
pub fn verify_fractional_gn(samples: &[ScalarField], alpha: f64, q: f64) -> Result<InequalityReport> {
    let pairs = samples
        .iter()
        .map(|f| {
            let lq = lq_norm(f, q);
            let w1 = lq + gradient_lq(f, q);
            Ok((sobolev_norm(f, alpha, q, None)?, w1.powf(alpha) * lq.powf(1.0 - alpha)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InequalityReport::from_pairs(pairs))
}
