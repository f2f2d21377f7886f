//! The remainder equation `d_t Y = L Y - (psi + e^{tL} u0 + Y)^{<>(2n-1)}`,
//! `Y(0) = 0`, marched with implicit Euler in `L` and the polynomial
//! nonlinearity explicit, and the energy diagnostics of the resulting `u`.
//!
//! The explicit nonlinearity needs `dt (2n - 1) sup |u|^{2n-2} < 1` for the
//! discrete dissipativity of `u`; larger steps can trip the blow-up guard.

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;

use crate::besov::{gradient_linf, neg_holder_norm, TestFamily};
use crate::elliptic::{gradient_energy, semigroup_path, OperatorHandle};
use crate::error::{Error, Result};
use crate::gaussian::{hermite_all, RenormalisationProfile};
use crate::lattice::{DomainGrid, ScalarField};
use crate::linalg::pairwise_sum;

/// Nodal values above this abort the march.
pub const BLOW_UP_GUARD: f64 = 1e6;

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// `g^{(k)}`, `k = 0..=2n-1`, one row per time step. Row `j` acts on
/// `[t_j, t_j + dt)`.
#[derive(Clone, Debug)]
pub struct ForcingSet {
    pub n: usize,
    pub grid: DomainGrid,
    pub dt: f64,
    pub t_start: f64,
    pub g: Vec<Array2<f64>>,
    pub meta: String,
}

impl ForcingSet {
    /// Arbitrary forcings; `g.len()` must be `2n`.
    pub fn from_parts(n: usize, grid: DomainGrid, dt: f64, t_start: f64, g: Vec<Array2<f64>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("degree parameter n must be at least 1".into()));
        }
        if g.len() != 2 * n {
            return Err(Error::ShapeMismatch(format!("{} forcings for n = {n}, expected {}", g.len(), 2 * n)));
        }
        let rows = g[0].nrows();
        if g.iter().any(|a| a.nrows() != rows || a.ncols() != grid.len()) {
            return Err(Error::ShapeMismatch("forcings differ in shape".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidStep(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { n, grid, dt, t_start, g, meta: "custom".into() })
    }

    pub fn steps(&self) -> usize {
        self.g[0].nrows()
    }

    /// Time at which row `j` is evaluated.
    pub fn eval_time(&self, j: usize) -> f64 {
        self.t_start + (j as f64 + 0.5) * self.dt
    }
}

/// Uniform step of a time-stamped path.
fn path_step(path: &[ScalarField]) -> Result<(f64, f64)> {
    if path.len() < 2 {
        return Err(Error::InsufficientData("a path needs at least two time slices".into()));
    }
    let times: Vec<f64> = path
        .iter()
        .map(|p| p.time().ok_or_else(|| Error::TimeMisalignment("path slice without a time stamp".into())))
        .collect::<Result<_>>()?;
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::TimeMisalignment("path times must increase".into()));
    }
    for (k, t) in times.iter().enumerate() {
        if (t - times[0] - k as f64 * dt).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::TimeMisalignment(format!("slice {k} at t = {t} breaks the uniform step {dt}")));
        }
    }
    Ok((times[0], dt))
}

/// `g^{(k)}(t) = H_{2n-1-k}(psi(t) + e^{tL} u0; C)` with `psi` taken at the
/// left end of each step and the drift at its midpoint, so no row sees
/// `t = 0` in the drift.
pub fn build_forcings(
    psi_path: &[ScalarField],
    u0: &ScalarField,
    l: &OperatorHandle,
    c: &RenormalisationProfile,
    n: usize,
) -> Result<ForcingSet> {
    let (t0, dt) = path_step(psi_path)?;
    let grid = *l.grid();
    if u0.grid() != &grid || c.grid != grid || psi_path[0].grid() != &grid {
        return Err(Error::GridMismatch("paths, initial datum, profile and operator must share the grid".into()));
    }
    if n == 0 {
        return Err(Error::Config("degree parameter n must be at least 1".into()));
    }
    let steps = psi_path.len() - 1;
    let mids: Vec<f64> = (0..steps).map(|j| (j as f64 + 0.5) * dt).collect();
    let drift = if u0.sup() == 0.0 { vec![Array1::zeros(grid.len()); steps] } else { semigroup_path(l, u0, &mids)? };
    let deg = 2 * n - 1;
    let mut g: Vec<Array2<f64>> = (0..=deg).map(|_| Array2::zeros((steps, grid.len()))).collect();
    for j in 0..steps {
        let psi = psi_path[j].values();
        for x in 0..grid.len() {
            let h = hermite_all(deg, psi[x] + drift[j][x], c.values[x]);
            for (k, gk) in g.iter_mut().enumerate() {
                gk[[j, x]] = h[deg - k];
            }
        }
    }
    let meta = format!("wick n={n} eps={} dt={dt} psi_seed={:?}", l.epsilon(), psi_path[0].seed());
    Ok(ForcingSet { n, grid, dt, t_start: t0, g, meta })
}

#[derive(Clone, Debug)]
pub struct RemainderPath {
    pub times: Vec<f64>,
    pub y: Vec<Array1<f64>>,
    pub epsilon: f64,
    pub n: usize,
    pub forcing_meta: String,
}

impl RemainderPath {
    pub fn fields(&self, grid: DomainGrid) -> Result<Vec<ScalarField>> {
        self.times
            .iter()
            .zip(&self.y)
            .map(|(t, y)| Ok(ScalarField::from_values(grid, y.clone())?.with_time(*t)))
            .collect()
    }
}

/// Marches `Y_{j+1} = (I - dt L)^{-1} (Y_j - dt sum_k binom(2n-1, k) g^{(k)}_j Y_j^k)`
/// up to time `t_end` after the forcing start.
pub fn solve_remainder(l: &OperatorHandle, forcings: &ForcingSet, t_end: f64) -> Result<RemainderPath> {
    if forcings.grid != *l.grid() {
        return Err(Error::GridMismatch("forcings and operator differ in grid".into()));
    }
    let dt = forcings.dt;
    let steps = crate::noise::step_count(dt, (0.0, t_end))?;
    if steps > forcings.steps() {
        return Err(Error::InvalidHorizon(format!("forcings cover {} steps, {steps} requested", forcings.steps())));
    }
    let deg = 2 * forcings.n - 1;
    let coef: Vec<f64> = (0..=deg).map(|k| binom(deg, k)).collect();
    let factor = l.implicit_factor(dt)?;
    let len = l.grid().len();
    let mut y = Array1::<f64>::zeros(len);
    let mut times = vec![forcings.t_start];
    let mut path = vec![y.clone()];
    let mut rhs = Array1::<f64>::zeros(len);
    for j in 0..steps {
        let rows: Vec<_> = forcings.g.iter().map(|g| g.row(j)).collect();
        for x in 0..len {
            // Horner in Y.
            let mut p = coef[deg] * rows[deg][x];
            for k in (0..deg).rev() {
                p = p * y[x] + coef[k] * rows[k][x];
            }
            rhs[x] = y[x] - dt * p;
        }
        y = factor.solve(rhs.view())?;
        let t = forcings.t_start + (j + 1) as f64 * dt;
        if let Some(v) = y.iter().copied().find(|v| !(v.abs() <= BLOW_UP_GUARD)) {
            return Err(Error::BlowUp { time: t, value: v });
        }
        times.push(t);
        path.push(y.clone());
    }
    Ok(RemainderPath { times, y: path, epsilon: l.epsilon(), n: forcings.n, forcing_meta: forcings.meta.clone() })
}

fn drift_path(u0: &ScalarField, l: &OperatorHandle, y: &RemainderPath) -> Result<Vec<Array1<f64>>> {
    let rel: Vec<f64> = y.times.iter().map(|t| t - y.times[0]).collect();
    semigroup_path(l, u0, &rel)
}

/// `u(t) = e^{tL} u0 + Y(t)`.
pub fn remainder_solution(u0: &ScalarField, l: &OperatorHandle, y: &RemainderPath) -> Result<Vec<ScalarField>> {
    let drift = drift_path(u0, l, y)?;
    y.times
        .iter()
        .zip(drift.iter().zip(&y.y))
        .map(|(t, (v, yy))| Ok(ScalarField::from_values(*l.grid(), v + yy)?.with_time(*t)))
        .collect()
}

/// `phi(t) = psi(t) + e^{tL} u0 + Y(t)`.
pub fn assemble_solution(
    psi_path: &[ScalarField],
    u0: &ScalarField,
    l: &OperatorHandle,
    y: &RemainderPath,
) -> Result<Vec<ScalarField>> {
    if psi_path.len() < y.times.len() {
        return Err(Error::TimeMisalignment(format!(
            "psi has {} slices, remainder {}",
            psi_path.len(),
            y.times.len()
        )));
    }
    let u = remainder_solution(u0, l, y)?;
    u.iter()
        .zip(psi_path)
        .map(|(u, p)| {
            let (tu, tp) = (u.time().unwrap_or(0.0), p.time().unwrap_or(f64::NAN));
            if (tu - tp).abs() > 1e-9 * (1.0 + tu.abs()) {
                return Err(Error::TimeMisalignment(format!("psi at t = {tp}, remainder at t = {tu}")));
            }
            Ok(p.add(u)?.with_time(tu))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyRow {
    pub t: f64,
    pub m: usize,
    /// `||u||_{L^{2m}}^{2m}`.
    pub value: f64,
    /// `t^{m / (n - 1)} value`; unweighted for `n = 1`.
    pub weighted_value: f64,
    /// `||grad(u^m)||_{L^2}^2`.
    pub gradient: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyDiagnostics {
    pub rows: Vec<EnergyRow>,
    /// `(m, sup_t weighted_value)`.
    pub sup_weighted: Vec<(usize, f64)>,
}

impl EnergyDiagnostics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,m,value,weighted_value\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{:.17e},{:.17e}\n", r.t, r.m, r.value, r.weighted_value));
        }
        s
    }
}

pub fn energy_diagnostics(path: &[ScalarField], m_list: &[usize], n: usize) -> Result<EnergyDiagnostics> {
    let first = path.first().ok_or_else(|| Error::InsufficientData("empty path".into()))?;
    let t0 = first.time().unwrap_or(0.0);
    let mut rows = Vec::with_capacity(path.len() * m_list.len());
    for u in path {
        let t = u.time().unwrap_or(0.0) - t0;
        let g = u.grid();
        for &m in m_list {
            if m == 0 {
                return Err(Error::InvalidExponent("energy exponent m must be positive".into()));
            }
            let p: Vec<f64> = u.values().iter().map(|v| v.powi(2 * m as i32)).collect();
            let value = pairwise_sum(&p) * g.measure();
            let weight = if n > 1 { t.powf(m as f64 / (n - 1) as f64) } else { 1.0 };
            let um = u.values().mapv(|v| v.powi(m as i32));
            rows.push(EnergyRow { t, m, value, weighted_value: weight * value, gradient: gradient_energy(g, um.view()) });
        }
    }
    let sup_weighted = m_list
        .iter()
        .map(|&m| (m, rows.iter().filter(|r| r.m == m).map(|r| r.weighted_value).fold(0.0, f64::max)))
        .collect();
    Ok(EnergyDiagnostics { rows, sup_weighted })
}

/// `max_k sup_j t_j^{1/5} ||g^{(k)}(t_j)||_{C^{-kappa}}` over every `stride`-th row.
pub fn forcing_size(forcings: &ForcingSet, family: &TestFamily, kappa: f64, stride: usize) -> Result<f64> {
    let mut best = 0.0f64;
    for g in &forcings.g {
        for j in (0..forcings.steps()).step_by(stride.max(1)) {
            let t = forcings.eval_time(j) - forcings.t_start;
            let f = ScalarField::from_values(forcings.grid, g.row(j).to_owned())?;
            best = best.max(t.powf(0.2) * neg_holder_norm(&f, -kappa, family)?.value);
        }
    }
    Ok(best)
}

/// `sup_t (||Y||_{L^inf} + ||grad Y||_{L^inf})`.
pub fn remainder_lipschitz_norm(y: &RemainderPath, grid: DomainGrid) -> Result<f64> {
    let mut best = 0.0f64;
    for v in &y.y {
        let f = ScalarField::from_values(grid, v.clone())?;
        best = best.max(f.sup() + gradient_linf(&f));
    }
    Ok(best)
}

/// Whether `||u||_{L^2}` never increases along the path.
pub fn is_l2_dissipative(path: &[ScalarField]) -> bool {
    let norms: Vec<f64> = path.iter().map(|u| u.inner(u).unwrap_or(f64::NAN)).collect();
    norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
}

/// Rows of a forcing set as fields, mainly for export.
pub fn forcing_fields(f: &ForcingSet, k: usize) -> Result<Vec<ScalarField>> {
    f.g[k]
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(j, r)| Ok(ScalarField::from_values(f.grid, r.to_owned())?.with_time(f.eval_time(j))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{apply_semigroup, assemble_operator, OperatorCoefficient};
    use crate::gaussian::{evolve_linear, evolve_linear_forced, hermite, stationary_covariance, CovarianceMethod, StationarySampler};
    use crate::lattice::{build_domain_grid, lp_norm, make_coefficient_at, CoefficientSpec, PeriodicCoefficient, Sym2};
    use crate::noise::{mollify_time_profile, sample_white_noise};
    use approx::assert_abs_diff_eq;

    fn laminate() -> PeriodicCoefficient {
        make_coefficient_at(&CoefficientSpec::Laminate { axis: 1, low: 1.0, high: 4.0 }, 16).unwrap()
    }

    fn zero_psi(g: DomainGrid, dt: f64, steps: usize) -> Vec<ScalarField> {
        (0..=steps).map(|k| ScalarField::zeros(g).with_time(k as f64 * dt)).collect()
    }

    fn bump_u0(g: DomainGrid, amp: f64) -> ScalarField {
        ScalarField::from_fn(g, |x, y| amp * (std::f64::consts::PI * x).sin() * (2.0 * std::f64::consts::PI * y).sin().abs())
    }

    fn psi_path(l: &OperatorHandle, dt: f64, t_end: f64, seed: u64) -> Vec<ScalarField> {
        let sigma = stationary_covariance(l, CovarianceMethod::ImplicitEuler { dt }).unwrap();
        let psi0 = StationarySampler::new(&sigma).unwrap().draw(seed, 1_000);
        let xi = sample_white_noise(*l.grid(), dt, (0.0, t_end), seed, 0).unwrap();
        evolve_linear(l, &psi0, &xi, t_end).unwrap()
    }

    #[test]
    fn forcing_identities() {
        let a = laminate();
        let g = build_domain_grid(7).unwrap();
        let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.5, g).unwrap();
        let dt = 1e-3;
        let psi = psi_path(&l, dt, 0.01, 3);
        let c = RenormalisationProfile::constant(g, 0.4);
        let u0 = bump_u0(g, 1.5);

        let f1 = build_forcings(&psi, &u0, &l, &c, 1).unwrap();
        assert!(f1.g[1].iter().all(|v| *v == 1.0));
        let v = apply_semigroup(&l, 0.5 * dt, &u0).unwrap();
        for x in 0..g.len() {
            assert_abs_diff_eq!(f1.g[0][[0, x]], psi[0].values()[x] + v.values()[x], epsilon = 1e-12);
        }

        let f0 = build_forcings(&psi, &ScalarField::zeros(g), &l, &c, 2).unwrap();
        for j in [0, 5] {
            for x in 0..g.len() {
                let p = psi[j].values()[x];
                assert_eq!(f0.g[0][[j, x]], hermite(3, p, 0.4));
                assert_eq!(f0.g[1][[j, x]], hermite(2, p, 0.4));
            }
        }

        let f2 = build_forcings(&psi, &u0, &l, &c, 2).unwrap();
        let v3 = apply_semigroup(&l, 3.5 * dt, &u0).unwrap();
        for x in 0..g.len() {
            let (p, d, cc) = (psi[3].values()[x], v3.values()[x], 0.4);
            let direct = p.powi(3) - 3.0 * cc * p + 3.0 * d * (p * p - cc) + 3.0 * d * d * p + d.powi(3);
            assert_abs_diff_eq!(f2.g[0][[3, x]], direct, epsilon = 1e-10);
            assert_eq!(f2.g[3][[3, x]], 1.0);
        }

        let mut bad = psi.clone();
        bad[2] = bad[2].clone().with_time(0.5);
        assert!(matches!(build_forcings(&bad, &u0, &l, &c, 2), Err(Error::TimeMisalignment(_))));
    }

    #[test]
    fn zero_data_gives_zero_remainder() {
        let g = build_domain_grid(7).unwrap();
        let l = assemble_operator(OperatorCoefficient::Constant(Sym2::IDENTITY), 0.0, g).unwrap();
        let psi = zero_psi(g, 1e-3, 20);
        let c = RenormalisationProfile::constant(g, 0.0);
        let f = build_forcings(&psi, &ScalarField::zeros(g), &l, &c, 2).unwrap();
        let y = solve_remainder(&l, &f, 0.02).unwrap();
        assert_eq!(y.times.len(), 21);
        assert!(y.y.iter().all(|v| v.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn linear_duhamel_oracle_first_order() {
        // n = 1, g^{(0)} = c constant, g^{(1)} = 1: Y' = (L - 1) Y - c.
        let g = build_domain_grid(15).unwrap();
        let l = assemble_operator(OperatorCoefficient::Constant(Sym2::diag(1.0, 2.0)), 0.0, g).unwrap();
        let es = l.eigensystem().unwrap();
        let t_end = 0.2;
        let cval = 3.0;
        let ck = es.to_modal(Array1::from_elem(g.len(), cval).view());
        let exact = {
            let mut m = ck.clone();
            m.iter_mut().zip(es.values().iter()).for_each(|(c, &lam)| *c *= -(1.0 - ((lam - 1.0) * t_end).exp()) / (1.0 - lam));
            es.from_modal(m.view())
        };
        let err = |dt: f64| {
            let steps = (t_end / dt).round() as usize;
            let f = ForcingSet::from_parts(
                1,
                g,
                dt,
                0.0,
                vec![Array2::from_elem((steps, g.len()), cval), Array2::ones((steps, g.len()))],
            )
            .unwrap();
            let y = solve_remainder(&l, &f, t_end).unwrap();
            let last = y.y.last().unwrap();
            assert!(last.iter().all(|v| *v < 0.0));
            (last - &exact).iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let (e1, e2) = (err(2e-3), err(1e-3));
        assert!(e2 < 1e-2 * exact.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        assert!((e1 / e2 - 2.0).abs() < 0.3, "{e1} {e2}");
    }

    /// Explicit Euler for `u' = L u - u^3` with a step far below the CFL limit.
    fn explicit_reference(l: &OperatorHandle, u0: &ScalarField, t_end: f64, steps: usize) -> Array1<f64> {
        let dt = t_end / steps as f64;
        let mut u = u0.values().clone();
        for _ in 0..steps {
            let lu = l.apply(u.view());
            u = &u + &((&lu - &u.mapv(|v| v.powi(3))) * dt);
        }
        u
    }

    #[test]
    fn deterministic_reduction_matches_reference() {
        let a = laminate();
        let g = build_domain_grid(15).unwrap();
        let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.25, g).unwrap();
        let u0 = bump_u0(g, 2.0);
        let dt = 1e-4;
        let t_end: f64 = 0.05;
        let steps = (t_end / dt).round() as usize;
        let psi = zero_psi(g, dt, steps);
        let f = build_forcings(&psi, &u0, &l, &RenormalisationProfile::constant(g, 0.0), 2).unwrap();
        let y = solve_remainder(&l, &f, t_end).unwrap();
        let u = remainder_solution(&u0, &l, &y).unwrap();
        let reference = explicit_reference(&l, &u0, t_end, 20_000);
        let err = (u.last().unwrap().values() - &reference).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 2e-3 * reference.iter().fold(0.0f64, |m, v| m.max(v.abs())), "{err}");
        assert!(is_l2_dissipative(&u));
        assert_eq!(y.y[0].iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
        let phi = assemble_solution(&psi, &u0, &l, &y).unwrap();
        assert_eq!(phi[0].values(), u0.values());
    }

    #[test]
    fn blow_up_is_reported() {
        let g = build_domain_grid(7).unwrap();
        let l = assemble_operator(OperatorCoefficient::Constant(Sym2::IDENTITY), 0.0, g).unwrap();
        let u0 = bump_u0(g, 1e3);
        let psi = zero_psi(g, 0.01, 10);
        let f = build_forcings(&psi, &u0, &l, &RenormalisationProfile::constant(g, 0.0), 2).unwrap();
        assert!(matches!(solve_remainder(&l, &f, 0.1), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn energy_table_consistency() {
        let g = build_domain_grid(7).unwrap();
        let path: Vec<ScalarField> =
            (0..4).map(|k| ScalarField::from_fn(g, |x, y| (k as f64 + 1.0) * x * y).with_time(0.1 * k as f64)).collect();
        let d = energy_diagnostics(&path, &[1, 2], 2).unwrap();
        for (r, u) in d.rows.iter().filter(|r| r.m == 1).zip(&path) {
            assert_abs_diff_eq!(r.value, lp_norm(u, 2.0).unwrap().powi(2), epsilon = 1e-12);
            assert_abs_diff_eq!(r.weighted_value, r.t * r.value, epsilon = 1e-12);
        }
        assert!(d.to_csv().starts_with("t,m,value,weighted_value\n0,1,"));
        assert_eq!(d.sup_weighted.len(), 2);
    }

    #[test]
    fn initial_data_is_forgotten() {
        let a = laminate();
        let g = build_domain_grid(15).unwrap();
        let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.5, g).unwrap();
        let dt = 2e-5;
        let t_end = 0.5;
        let psi = psi_path(&l, dt, t_end, 9);
        let sigma = stationary_covariance(&l, CovarianceMethod::ImplicitEuler { dt }).unwrap();
        let c = crate::gaussian::renormalisation_constant(&sigma).unwrap();
        let run = |amp: f64| {
            let u0 = bump_u0(g, amp);
            let f = build_forcings(&psi, &u0, &l, &c, 2).unwrap();
            let y = solve_remainder(&l, &f, t_end).unwrap();
            remainder_solution(&u0, &l, &y).unwrap().pop().unwrap()
        };
        let (a1, a100) = (run(1.0), run(100.0));
        let diff = lp_norm(&a1.sub(&a100).unwrap(), 2.0).unwrap();
        assert!(diff < 0.05 * lp_norm(&a1, 2.0).unwrap());
    }

    #[test]
    fn weak_residual_of_assembled_solution() {
        // Smooth regime: time-mollified noise, psi from the same implicit
        // Euler recursion, residual against a smooth space-time test function.
        let g = build_domain_grid(15).unwrap();
        let l = assemble_operator(OperatorCoefficient::Constant(Sym2::IDENTITY), 0.0, g).unwrap();
        let dt = 1e-4;
        let delta = 0.1;
        let t_end: f64 = 0.02;
        let xi = sample_white_noise(g, dt, (-(delta * delta), t_end + delta * delta), 5, 0).unwrap();
        let xi_d = mollify_time_profile(&xi, delta).unwrap();
        let first = ((0.0 - xi_d.t_start) / dt).round() as usize;
        let rows = xi_d.values.slice(ndarray::s![first..first + (t_end / dt).round() as usize, ..]).to_owned();
        let psi = evolve_linear_forced(&l, &ScalarField::zeros(g), rows.view(), dt, 0.0).unwrap();
        let cc = 0.3;
        let c = RenormalisationProfile::constant(g, cc);
        let u0 = bump_u0(g, 0.5);
        let f = build_forcings(&psi, &u0, &l, &c, 2).unwrap();
        let y = solve_remainder(&l, &f, t_end).unwrap();
        let phi = assemble_solution(&psi, &u0, &l, &y).unwrap();
        let drift = semigroup_path(&l, &u0, &(0..psi.len() - 1).map(|j| (j as f64 + 0.5) * dt).collect::<Vec<_>>()).unwrap();
        let test = ScalarField::from_fn(g, |x, y| (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin());
        let eta = |t: f64| (std::f64::consts::PI * t / t_end).sin();
        let (mut res, mut scale) = (0.0, 0.0);
        for j in 0..psi.len() - 1 {
            let t = (j + 1) as f64 * dt;
            let dphi = (phi[j + 1].values() - phi[j].values()) / dt;
            let lphi = l.apply(phi[j + 1].values().view());
            let arg = psi[j].values() + &drift[j] + &y.y[j];
            let h3 = arg.mapv(|v| hermite(3, v, cc));
            let r = &dphi - &lphi + &h3 - rows.row(j);
            res += eta(t) * dt * test.inner(&ScalarField::from_values(g, r).unwrap()).unwrap();
            scale += eta(t) * dt * test.inner(&ScalarField::from_values(g, rows.row(j).to_owned()).unwrap()).unwrap().abs();
        }
        assert!(res.abs() < 1e-3 * scale, "{res} vs {scale}");
    }
}
