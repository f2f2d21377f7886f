//! Periodic corrector problem and the homogenised matrix.
//!
//! The cell is discretised on the coefficient's own `res x res` node grid
//! with spacing `1 / res`. For a macroscopic gradient `xi` the corrector
//! minimises `sum_e k_e (xi_e h + dchi_e)^2` plus the cross-cell terms, which
//! is a singular SPD system with constant kernel.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{PeriodicCoefficient, Sym2};
use crate::stencil::{cross_block, harmonic, C1, C2};

/// Default relative residual tolerance for the corrector solves.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Periodic correctors `chi_1`, `chi_2` on the cell grid, row-major with
/// the first cell coordinate fastest.
#[derive(Clone, Debug, Serialize)]
pub struct Corrector {
    pub resolution: usize,
    pub chi: [Vec<f64>; 2],
    pub residual_norm: [f64; 2],
    pub iterations: [usize; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HomogenisedMatrix {
    pub a_hat: Sym2,
    /// Relative asymmetry of the flux average before symmetrisation.
    pub asymmetry: f64,
}

struct CellStencil {
    res: usize,
    kx: Vec<f64>,
    ky: Vec<f64>,
    kxy: Option<Vec<f64>>,
}

impl CellStencil {
    fn new(a: &PeriodicCoefficient) -> Self {
        let res = a.resolution();
        let r = res as i64;
        let mut kx = vec![0.0; res * res];
        let mut ky = vec![0.0; res * res];
        for q in 0..r {
            for p in 0..r {
                let k = (q * r + p) as usize;
                let m = a.at_node(p, q);
                kx[k] = harmonic(m.a11, a.at_node(p + 1, q).a11);
                ky[k] = harmonic(m.a22, a.at_node(p, q + 1).a22);
            }
        }
        let kxy = a.has_off_diagonal().then(|| {
            (0..res * res)
                .map(|k| {
                    let (p, q) = ((k % res) as i64, (k / res) as i64);
                    0.25 * (a.at_node(p, q).a12
                        + a.at_node(p + 1, q).a12
                        + a.at_node(p, q + 1).a12
                        + a.at_node(p + 1, q + 1).a12)
                })
                .collect()
        });
        Self { res, kx, ky, kxy }
    }

    fn corners(&self, k: usize) -> [usize; 4] {
        let r = self.res;
        let (p, q) = (k % r, k / r);
        let p1 = (p + 1) % r;
        let q1 = (q + 1) % r;
        [q * r + p, q * r + p1, q1 * r + p, q1 * r + p1]
    }

    fn right(&self, k: usize) -> usize {
        let (p, q) = (k % self.res, k / self.res);
        q * self.res + (p + 1) % self.res
    }

    fn up(&self, k: usize) -> usize {
        let (p, q) = (k % self.res, k / self.res);
        ((q + 1) % self.res) * self.res + p
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..x.len() {
            let (r, u) = (self.right(k), self.up(k));
            let fx = self.kx[k] * (x[k] - x[r]);
            out[k] += fx;
            out[r] -= fx;
            let fy = self.ky[k] * (x[k] - x[u]);
            out[k] += fy;
            out[u] -= fy;
        }
        if let Some(kxy) = &self.kxy {
            for (k, &c) in kxy.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let idx = self.corners(k);
                for (a, &ia) in idx.iter().enumerate() {
                    let s: f64 = idx.iter().enumerate().map(|(b, &ib)| cross_block(a, b) * x[ib]).sum();
                    out[ia] += c * s;
                }
            }
        }
    }

    /// Linear term `b` of the energy for gradient `xi`; the corrector solves
    /// `K chi = -b`.
    fn load(&self, xi: [f64; 2]) -> Vec<f64> {
        let hc = 1.0 / self.res as f64;
        let mut b = vec![0.0; self.res * self.res];
        for k in 0..b.len() {
            let (r, u) = (self.right(k), self.up(k));
            let gx = self.kx[k] * xi[0] * hc;
            b[r] += gx;
            b[k] -= gx;
            let gy = self.ky[k] * xi[1] * hc;
            b[u] += gy;
            b[k] -= gy;
        }
        if let Some(kxy) = &self.kxy {
            for (k, &c) in kxy.iter().enumerate() {
                for (a, &ia) in self.corners(k).iter().enumerate() {
                    b[ia] += 0.5 * c * hc * (xi[0] * C2[a] + xi[1] * C1[a]);
                }
            }
        }
        b
    }
}

fn project_mean_zero(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_gradient(st: &CellStencil, rhs: &[f64], tol: f64, budget: usize) -> Result<(Vec<f64>, f64, usize)> {
    let n = rhs.len();
    let mut b = rhs.to_vec();
    project_mean_zero(&mut b);
    let bnorm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, 0.0, 0));
    }
    let mut r = b;
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut history = Vec::new();
    for it in 1..=budget {
        st.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project_mean_zero(&mut r);
        let rr_new = dot(&r, &r);
        let rel = rr_new.sqrt() / bnorm;
        history.push(rel);
        if rel < tol {
            project_mean_zero(&mut x);
            return Ok((x, rel, it));
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure {
        iterations: history.len(),
        residual: history.last().copied().unwrap_or(1.0),
        history,
    })
}

/// Solves both corrector problems by projected conjugate gradients to the
/// relative residual `tol`.
pub fn solve_corrector(a: &PeriodicCoefficient, tol: f64) -> Result<Corrector> {
    if !(tol >= 0.0) {
        return Err(Error::Config(format!("tolerance must be non-negative, got {tol}")));
    }
    let st = CellStencil::new(a);
    let budget = 50 * st.res + 1000;
    let solve = |xi: [f64; 2]| {
        let rhs: Vec<f64> = st.load(xi).into_iter().map(|v| -v).collect();
        conjugate_gradient(&st, &rhs, tol, budget)
    };
    let ((c1, r1, i1), (c2, r2, i2)) = match rayon::join(|| solve([1.0, 0.0]), || solve([0.0, 1.0])) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    Ok(Corrector { resolution: st.res, chi: [c1, c2], residual_norm: [r1, r2], iterations: [i1, i2] })
}

/// Flux average of `a (I + grad chi)`, symmetrised.
pub fn homogenised_matrix(a: &PeriodicCoefficient, chi: &Corrector) -> Result<HomogenisedMatrix> {
    if chi.resolution != a.resolution() {
        return Err(Error::ShapeMismatch(format!(
            "corrector resolution {} for coefficient resolution {}",
            chi.resolution,
            a.resolution()
        )));
    }
    let st = CellStencil::new(a);
    let hc = 1.0 / st.res as f64;
    let mut m = [[0.0f64; 2]; 2];
    for (l, x) in chi.chi.iter().enumerate() {
        let e = |d: usize| if d == l { 1.0 } else { 0.0 };
        let (mut s1, mut s2) = (0.0, 0.0);
        for k in 0..x.len() {
            s1 += st.kx[k] * (e(0) + (x[st.right(k)] - x[k]) / hc);
            s2 += st.ky[k] * (e(1) + (x[st.up(k)] - x[k]) / hc);
        }
        if let Some(kxy) = &st.kxy {
            for (k, &c) in kxy.iter().enumerate() {
                let u = st.corners(k).map(|i| x[i]);
                let g1 = C1.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / (2.0 * hc);
                let g2 = C2.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / (2.0 * hc);
                s1 += c * (e(1) + g2);
                s2 += c * (e(0) + g1);
            }
        }
        m[0][l] = s1 * hc * hc;
        m[1][l] = s2 * hc * hc;
    }
    let scale = m[0][0].abs().max(m[1][1].abs());
    let asymmetry = (m[0][1] - m[1][0]).abs() / scale;
    let a_hat = Sym2::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    if !(a_hat.eigenvalues().0 > 0.0) {
        return Err(Error::NumericalFailure(format!("homogenised matrix {a_hat} is not positive definite")));
    }
    Ok(HomogenisedMatrix { a_hat, asymmetry })
}

/// Corrector solve and flux average in one call.
pub fn homogenise(a: &PeriodicCoefficient, tol: f64) -> Result<(HomogenisedMatrix, Corrector)> {
    if let Some(c) = a.constant_value() {
        let n = a.resolution() * a.resolution();
        let chi = Corrector { resolution: a.resolution(), chi: [vec![0.0; n], vec![0.0; n]], residual_norm: [0.0; 2], iterations: [0; 2] };
        return Ok((HomogenisedMatrix { a_hat: c, asymmetry: 0.0 }, chi));
    }
    let chi = solve_corrector(a, tol)?;
    Ok((homogenised_matrix(a, &chi)?, chi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_coefficient, make_coefficient_at, CoefficientSpec};
    use approx::assert_abs_diff_eq;

    fn laminate(axis: u8, res: usize) -> PeriodicCoefficient {
        make_coefficient_at(&CoefficientSpec::Laminate { axis, low: 1.0, high: 4.0 }, res).unwrap()
    }

    #[test]
    fn constant_has_zero_corrector() {
        let a = make_coefficient(&CoefficientSpec::Constant { matrix: Sym2::scalar(2.0) }).unwrap();
        let chi = solve_corrector(&a, 1e-12).unwrap();
        assert!(chi.chi.iter().flatten().all(|v| *v == 0.0));
        let ah = homogenised_matrix(&a, &chi).unwrap();
        assert_eq!(ah.a_hat, Sym2::scalar(2.0));
    }

    #[test]
    fn constant_anisotropic_with_cross_term() {
        let m = Sym2::new(2.0, 0.5, 1.0);
        let a = PeriodicCoefficient::from_values(8, vec![m; 64]).unwrap();
        let chi = solve_corrector(&a, 1e-12).unwrap();
        assert!(chi.chi.iter().flatten().all(|v| v.abs() < 1e-12));
        let ah = homogenised_matrix(&a, &chi).unwrap().a_hat;
        assert!(ah.max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn laminate_matches_layered_formula() {
        let a = laminate(1, 64);
        let (ah, chi) = homogenise(&a, 1e-12).unwrap();
        assert_abs_diff_eq!(ah.a_hat.a11, 1.6, epsilon = 1e-9);
        assert_abs_diff_eq!(ah.a_hat.a22, 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(ah.a_hat.a12, 0.0, epsilon = 1e-9);
        assert!(chi.chi[1].iter().all(|v| v.abs() < 1e-9));
        // One-dimensional oracle: the flux k (1 + dchi / hc) equals 1.6 on every edge.
        let res = 64;
        let hc = 1.0 / res as f64;
        let alpha = |p: usize| if p % res < res / 2 { 1.0 } else { 4.0 };
        let mut oracle = vec![0.0; res];
        for p in 1..res {
            let k = harmonic(alpha(p - 1), alpha(p));
            oracle[p] = oracle[p - 1] + hc * (1.6 / k - 1.0);
        }
        let mean = oracle.iter().sum::<f64>() / res as f64;
        for q in 0..res {
            for (p, o) in oracle.iter().enumerate() {
                assert_abs_diff_eq!(chi.chi[0][q * res + p], o - mean, epsilon = 1e-9);
            }
        }

        let swapped = homogenise(&laminate(2, 64), 1e-12).unwrap().0.a_hat;
        assert_abs_diff_eq!(swapped.a11, 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(swapped.a22, 1.6, epsilon = 1e-9);
    }

    #[test]
    fn zero_tolerance_exhausts_budget() {
        let a = make_coefficient_at(&CoefficientSpec::SmoothChecker { contrast: 3.0 }, 8).unwrap();
        match solve_corrector(&a, 0.0) {
            Err(Error::SolverFailure { history, .. }) => assert!(!history.is_empty()),
            other => panic!("expected solver failure, got {other:?}"),
        }
    }

    #[test]
    fn voigt_reuss_bracket() {
        let specs = [
            CoefficientSpec::Laminate { axis: 1, low: 1.0, high: 4.0 },
            CoefficientSpec::Laminate { axis: 2, low: 0.5, high: 3.0 },
            CoefficientSpec::SmoothChecker { contrast: 10.0 },
        ];
        for s in &specs {
            let a = make_coefficient_at(s, 64).unwrap();
            let ah = homogenise(&a, 1e-11).unwrap().0;
            assert!(ah.asymmetry < 1e-8);
            let lo = a.harmonic_mean();
            let hi = a.arithmetic_mean();
            for t in 0..16 {
                let th = t as f64 * std::f64::consts::PI / 16.0;
                let x = [th.cos(), th.sin()];
                assert!(lo.quad(x) <= ah.a_hat.quad(x) + 1e-8, "{s:?}");
                assert!(ah.a_hat.quad(x) <= hi.quad(x) + 1e-8, "{s:?}");
            }
        }
    }

    #[test]
    fn second_order_grid_convergence() {
        let spec = CoefficientSpec::SmoothChecker { contrast: 4.0 };
        let ah: Vec<f64> = [16, 32, 64, 128]
            .iter()
            .map(|&r| homogenise(&make_coefficient_at(&spec, r).unwrap(), 1e-12).unwrap().0.a_hat.a11)
            .collect();
        let d1 = ah[1] - ah[0];
        let d2 = ah[2] - ah[1];
        let d3 = ah[3] - ah[2];
        assert!(d2.abs() < d1.abs() && d3.abs() < d2.abs());
        let ratio = d2 / d3;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}, values {ah:?}");
    }
}
