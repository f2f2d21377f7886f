//! Grids, periodic coefficient fields and scalar fields on the Dirichlet
//! unit square.

use std::fmt;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;

/// Uniform vertex-centred grid on the unit square with `n` interior nodes
/// per axis. Node `(i, j)` sits at `((i + 1) h, (j + 1) h)` and has flat
/// index `j * n + i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainGrid {
    n: usize,
}

pub fn build_domain_grid(n: usize) -> Result<DomainGrid> {
    DomainGrid::new(n)
}

impl DomainGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidResolution(format!("need at least 2 interior nodes per axis, got {n}")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.n, k / self.n)
    }

    pub fn coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.ij(k);
        let h = self.h();
        ((i + 1) as f64 * h, (j + 1) as f64 * h)
    }

    /// Cell weight of the discrete L^p norms.
    pub fn measure(&self) -> f64 {
        self.h() * self.h()
    }

    pub fn check_same(&self, other: &DomainGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("n = {} vs n = {}", self.n, other.n)));
        }
        Ok(())
    }
}

/// Symmetric 2x2 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { a11: 1.0, a12: 0.0, a22: 1.0 };

    pub fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Self { a11, a12, a22 }
    }

    pub fn diag(a11: f64, a22: f64) -> Self {
        Self { a11, a12: 0.0, a22 }
    }

    pub fn scalar(s: f64) -> Self {
        Self::diag(s, s)
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    /// Eigenvalues `(min, max)`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let m = 0.5 * self.trace();
        let r = (0.25 * (self.a11 - self.a22).powi(2) + self.a12 * self.a12).sqrt();
        (m - r, m + r)
    }

    pub fn quad(&self, x: [f64; 2]) -> f64 {
        self.a11 * x[0] * x[0] + 2.0 * self.a12 * x[0] * x[1] + self.a22 * x[1] * x[1]
    }

    pub fn inverse(&self) -> Sym2 {
        let d = self.det();
        Sym2::new(self.a22 / d, -self.a12 / d, self.a11 / d)
    }

    pub fn is_diagonal(&self) -> bool {
        self.a12 == 0.0
    }

    pub fn lerp(&self, other: &Sym2, t: f64) -> Sym2 {
        Sym2::new(
            self.a11 + t * (other.a11 - self.a11),
            self.a12 + t * (other.a12 - self.a12),
            self.a22 + t * (other.a22 - self.a22),
        )
    }

    pub fn max_abs_diff(&self, other: &Sym2) -> f64 {
        (self.a11 - other.a11)
            .abs()
            .max((self.a12 - other.a12).abs())
            .max((self.a22 - other.a22).abs())
    }

    pub fn as_rows(&self) -> [[f64; 2]; 2] {
        [[self.a11, self.a12], [self.a12, self.a22]]
    }
}

impl fmt::Display for Sym2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a11, self.a12, self.a12, self.a22)
    }
}

/// Coefficient presets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// Spatially constant matrix.
    Constant { matrix: Sym2 },
    /// `alpha(y) I` with `alpha = low` on the first half-period of the
    /// coordinate `y_axis` and `high` on the second.
    Laminate { axis: u8, low: f64, high: f64 },
    /// `exp(ln(contrast) (1 + sin 2 pi y1 sin 2 pi y2) / 2) I`.
    SmoothChecker { contrast: f64 },
    /// Full matrices per cell node, row-major, `resolution^2` entries.
    UserTable { resolution: usize, values: Vec<[[f64; 2]; 2]> },
}

/// Default number of cell nodes per period for the analytic presets.
pub const DEFAULT_CELL_RESOLUTION: usize = 128;

/// A 1-periodic symmetric uniformly elliptic field sampled on a `res x res`
/// cell grid; node `(p, q)` sits at `(p / res, q / res)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicCoefficient {
    resolution: usize,
    values: Vec<Sym2>,
    ellipticity_lower: f64,
    ellipticity_upper: f64,
    holder_exponent: f64,
}

pub fn make_coefficient(spec: &CoefficientSpec) -> Result<PeriodicCoefficient> {
    make_coefficient_at(spec, DEFAULT_CELL_RESOLUTION)
}

/// As [`make_coefficient`] with an explicit resolution for the analytic
/// presets (ignored for constant and user tables).
pub fn make_coefficient_at(spec: &CoefficientSpec, resolution: usize) -> Result<PeriodicCoefficient> {
    match spec {
        CoefficientSpec::Constant { matrix } => PeriodicCoefficient::from_values(1, vec![*matrix]),
        CoefficientSpec::Laminate { axis, low, high } => {
            if *axis != 1 && *axis != 2 {
                return Err(Error::Config(format!("laminate axis must be 1 or 2, got {axis}")));
            }
            if resolution < 2 || !resolution.is_multiple_of(2) {
                return Err(Error::InvalidResolution(format!(
                    "laminate needs an even cell resolution, got {resolution}"
                )));
            }
            let values = (0..resolution * resolution)
                .map(|k| {
                    let (p, q) = (k % resolution, k / resolution);
                    let s = if *axis == 1 { p } else { q };
                    Sym2::scalar(if s < resolution / 2 { *low } else { *high })
                })
                .collect();
            PeriodicCoefficient::from_values(resolution, values)
        }
        CoefficientSpec::SmoothChecker { contrast } => {
            if !(*contrast >= 1.0) {
                return Err(Error::Config(format!("contrast must be at least 1, got {contrast}")));
            }
            if resolution < 2 {
                return Err(Error::InvalidResolution(format!("cell resolution {resolution}")));
            }
            let tau = 2.0 * std::f64::consts::PI;
            let lc = contrast.ln();
            let values = (0..resolution * resolution)
                .map(|k| {
                    let y1 = (k % resolution) as f64 / resolution as f64;
                    let y2 = (k / resolution) as f64 / resolution as f64;
                    Sym2::scalar((0.5 * lc * (1.0 + (tau * y1).sin() * (tau * y2).sin())).exp())
                })
                .collect();
            PeriodicCoefficient::from_values(resolution, values)
        }
        CoefficientSpec::UserTable { resolution, values } => {
            if *resolution == 0 || values.len() != resolution * resolution {
                return Err(Error::InvalidResolution(format!(
                    "user table has {} entries, expected {}^2",
                    values.len(),
                    resolution
                )));
            }
            let mut out = Vec::with_capacity(values.len());
            for (k, m) in values.iter().enumerate() {
                if m[0][1] != m[1][0] {
                    return Err(Error::AssumptionViolation(format!(
                        "entry {k} is not symmetric: a12 = {}, a21 = {}",
                        m[0][1], m[1][0]
                    )));
                }
                out.push(Sym2::new(m[0][0], m[0][1], m[1][1]));
            }
            PeriodicCoefficient::from_values(*resolution, out)
        }
    }
}

/// Parses a row-major CSV of `a11,a12,a22` per cell node. Four columns are
/// read as `a11,a12,a21,a22`. Blank lines and lines starting with `#` are
/// skipped, as is a header line that does not parse.
pub fn parse_coefficient_table(text: &str) -> Result<CoefficientSpec> {
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if values.is_empty() && lineno == 0 => continue,
            Err(e) => return Err(Error::Config(format!("coefficient table line {}: {e}", lineno + 1))),
        };
        let m = match row.as_slice() {
            [a11, a12, a22] => [[*a11, *a12], [*a12, *a22]],
            [a11, a12, a21, a22] => [[*a11, *a12], [*a21, *a22]],
            _ => {
                return Err(Error::Config(format!(
                    "coefficient table line {}: expected 3 or 4 columns, got {}",
                    lineno + 1,
                    row.len()
                )))
            }
        };
        values.push(m);
    }
    let resolution = (values.len() as f64).sqrt().round() as usize;
    if resolution * resolution != values.len() || resolution == 0 {
        return Err(Error::InvalidResolution(format!("{} table entries is not a square count", values.len())));
    }
    Ok(CoefficientSpec::UserTable { resolution, values })
}

impl PeriodicCoefficient {
    pub fn from_values(resolution: usize, values: Vec<Sym2>) -> Result<Self> {
        if resolution == 0 || values.len() != resolution * resolution {
            return Err(Error::InvalidResolution(format!(
                "{} values for cell resolution {resolution}",
                values.len()
            )));
        }
        let mut lower = f64::INFINITY;
        let mut upper = 0.0f64;
        for (k, m) in values.iter().enumerate() {
            if !(m.a11.is_finite() && m.a12.is_finite() && m.a22.is_finite()) {
                return Err(Error::AssumptionViolation(format!("entry {k} is not finite")));
            }
            let (lo, hi) = m.eigenvalues();
            if !(lo > 0.0) {
                return Err(Error::AssumptionViolation(format!(
                    "entry {k} = {m} is not positive definite (min eigenvalue {lo})"
                )));
            }
            lower = lower.min(lo);
            upper = upper.max(hi);
        }
        Ok(Self { resolution, values, ellipticity_lower: lower, ellipticity_upper: upper, holder_exponent: 1.0 })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[Sym2] {
        &self.values
    }

    pub fn ellipticity_lower(&self) -> f64 {
        self.ellipticity_lower
    }

    pub fn ellipticity_upper(&self) -> f64 {
        self.ellipticity_upper
    }

    /// Informational only; the sampled field is piecewise bilinear.
    pub fn holder_exponent(&self) -> f64 {
        self.holder_exponent
    }

    /// The constant value, if every node carries the same matrix.
    pub fn constant_value(&self) -> Option<Sym2> {
        let first = self.values[0];
        self.values.iter().all(|m| *m == first).then_some(first)
    }

    pub fn has_off_diagonal(&self) -> bool {
        self.values.iter().any(|m| m.a12 != 0.0)
    }

    /// Value at cell node `(p, q)` with periodic wrap.
    pub fn at_node(&self, p: i64, q: i64) -> Sym2 {
        let r = self.resolution as i64;
        let p = p.rem_euclid(r) as usize;
        let q = q.rem_euclid(r) as usize;
        self.values[q * self.resolution + p]
    }

    /// Bilinear periodic interpolation at the cell point `y`.
    pub fn evaluate(&self, y: [f64; 2]) -> Sym2 {
        let r = self.resolution as f64;
        let s1 = y[0].rem_euclid(1.0) * r;
        let s2 = y[1].rem_euclid(1.0) * r;
        let p = s1.floor();
        let q = s2.floor();
        let (t1, t2) = (s1 - p, s2 - q);
        let (p, q) = (p as i64, q as i64);
        let lo = self.at_node(p, q).lerp(&self.at_node(p + 1, q), t1);
        let hi = self.at_node(p, q + 1).lerp(&self.at_node(p + 1, q + 1), t1);
        lo.lerp(&hi, t2)
    }

    /// Value at the cell point `(num1 / den, num2 / den)` with integer
    /// numerators; exact node lookup whenever the point is a cell node.
    pub fn evaluate_rational(&self, num1: u64, num2: u64, den: u64) -> Sym2 {
        let r = self.resolution as u64;
        let (m1, m2) = ((num1 % den) * r, (num2 % den) * r);
        if m1 % den == 0 && m2 % den == 0 {
            return self.at_node((m1 / den) as i64, (m2 / den) as i64);
        }
        self.evaluate([(num1 % den) as f64 / den as f64, (num2 % den) as f64 / den as f64])
    }

    /// Arithmetic mean matrix over the cell.
    pub fn arithmetic_mean(&self) -> Sym2 {
        let n = self.values.len() as f64;
        let s = |f: fn(&Sym2) -> f64| pairwise_sum(&self.values.iter().map(f).collect::<Vec<_>>()) / n;
        Sym2::new(s(|m| m.a11), s(|m| m.a12), s(|m| m.a22))
    }

    /// Harmonic mean matrix, the inverse of the mean inverse.
    pub fn harmonic_mean(&self) -> Sym2 {
        let inv: Vec<Sym2> = self.values.iter().map(Sym2::inverse).collect();
        let n = inv.len() as f64;
        let s = |f: fn(&Sym2) -> f64| pairwise_sum(&inv.iter().map(f).collect::<Vec<_>>()) / n;
        Sym2::new(s(|m| m.a11), s(|m| m.a12), s(|m| m.a22)).inverse()
    }
}

/// `a(x / epsilon)` by periodic wrap and bilinear interpolation.
pub fn evaluate_scaled(a: &PeriodicCoefficient, epsilon: f64, x: [f64; 2]) -> Result<Sym2> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidScale(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    if !(0.0..=1.0).contains(&x[0]) || !(0.0..=1.0).contains(&x[1]) {
        return Err(Error::OutOfDomain(format!("({}, {})", x[0], x[1])));
    }
    Ok(a.evaluate([x[0] / epsilon, x[1] / epsilon]))
}

/// Whether `epsilon = 1 / denom` samples `a` on `grid` without aliasing:
/// `denom` divides `n + 1`, and the resulting number `P` of grid spacings
/// per period divides, or is divided by, the cell resolution.
pub fn is_commensurate(grid: &DomainGrid, a: &PeriodicCoefficient, denom: u64) -> bool {
    let m = grid.n() as u64 + 1;
    if denom == 0 || !m.is_multiple_of(denom) {
        return false;
    }
    let p = m / denom;
    let r = a.resolution() as u64;
    p.is_multiple_of(r) || r.is_multiple_of(p)
}

/// All admissible denominators `N` (with `epsilon = 1 / N`) for `grid`.
pub fn admissible_denominators(grid: &DomainGrid, a: &PeriodicCoefficient) -> Vec<u64> {
    (1..=grid.n() as u64 + 1).filter(|&d| is_commensurate(grid, a, d)).collect()
}

/// `a(x / epsilon)` at every interior node of `grid`, using exact cell-node
/// lookup when `1 / epsilon` is an integer.
pub fn sample_on_grid(a: &PeriodicCoefficient, epsilon: f64, grid: &DomainGrid) -> Result<Vec<Sym2>> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidScale(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    let denom = (1.0 / epsilon).round();
    let rational = (denom * epsilon - 1.0).abs() <= 1e-9;
    let m = grid.n() as u64 + 1;
    Ok((0..grid.len())
        .map(|k| {
            let (i, j) = grid.ij(k);
            if rational {
                let d = denom as u64;
                a.evaluate_rational((i as u64 + 1) * d, (j as u64 + 1) * d, m)
            } else {
                let (x, y) = grid.coords(k);
                a.evaluate([x / epsilon, y / epsilon])
            }
        })
        .collect())
}

/// Values on the interior nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: DomainGrid,
    values: Array1<f64>,
    time: Option<f64>,
    seed: Option<u64>,
}

impl ScalarField {
    pub fn zeros(grid: DomainGrid) -> Self {
        Self { grid, values: Array1::zeros(grid.len()), time: None, seed: None }
    }

    pub fn from_fn(grid: DomainGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array1::from_shape_fn(grid.len(), |k| {
            let (x, y) = grid.coords(k);
            f(x, y)
        });
        Self { grid, values, time: None, seed: None }
    }

    pub fn from_values(grid: DomainGrid, values: Array1<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!("non-finite value at node {k}")));
        }
        Ok(Self { grid, values, time: None, seed: None })
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array1<f64> {
        self.values
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `self - other`, keeping the time tag of `self`.
    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(&other.grid)?;
        Ok(Self { grid: self.grid, values: &self.values - &other.values, time: self.time, seed: None })
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(&other.grid)?;
        Ok(Self { grid: self.grid, values: &self.values + &other.values, time: self.time, seed: None })
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        Self { grid: self.grid, values: &self.values * s, time: self.time, seed: self.seed }
    }

    /// Discrete `L^2` inner product with weight `h^2`.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let p: Vec<f64> = self.values.iter().zip(other.values.iter()).map(|(a, b)| a * b).collect();
        Ok(pairwise_sum(&p) * self.grid.measure())
    }

    /// Discrete integral with weight `h^2`.
    pub fn integral(&self) -> f64 {
        pairwise_sum(self.values.as_slice().expect("contiguous")) * self.grid.measure()
    }
}

/// Discrete `L^p` norm with weight `h^2`; `p = f64::INFINITY` gives the sup.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(format!("p must be at least 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(f.sup());
    }
    let scale = f.sup();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let terms: Vec<f64> = f.values.iter().map(|v| (v.abs() / scale).powf(p)).collect();
    Ok(scale * (pairwise_sum(&terms) * f.grid.measure()).powf(1.0 / p))
}
