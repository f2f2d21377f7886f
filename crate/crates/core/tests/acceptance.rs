//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --release --test acceptance -- [C1 C5 ...] [--strict]`
//! selects criteria by id; `--strict` turns any FAIL into a non-zero exit.

use std::f64::consts::PI;
use std::time::Instant;

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use phi_homog::bench::{
    predicted_slope_ratio, run_full_convergence, run_kernel_suite, run_renormalisation_divergence, ConvergenceReport,
    Setup,
};
use phi_homog::cell::{homogenise, DEFAULT_TOLERANCE};
use phi_homog::config::{load_manifest, parse_config_str, persist_report, ExperimentConfig, RunManifest};
use phi_homog::dynamics::{build_forcings, is_l2_dissipative, remainder_solution, solve_remainder};
use phi_homog::elliptic::{assemble_operator, OperatorCoefficient, OperatorHandle};
use phi_homog::gaussian::{
    evolve_linear, hermite, renormalisation_profile, stationary_covariance, wick_moment_oracle, wick_power,
    CovarianceMethod, RenormalisationProfile, StationarySampler,
};
use phi_homog::lattice::{build_domain_grid, lp_norm, make_coefficient_at, CoefficientSpec, DomainGrid, ScalarField, Sym2};
use phi_homog::noise::{keyed_rng, sample_white_noise};
use phi_homog::Result;

// Tolerances and thresholds.
const C1_REL: f64 = 1e-3;
const C1_CONST: f64 = 1e-10;
const C1_SECONDS: f64 = 10.0;
const C2_TOL: f64 = 1e-8;
const C3_SECONDS: f64 = 300.0;
const C5_CONTROL: f64 = 1e-10;
const C6_SIGMAS: f64 = 3.0;
const C6_SCALAR_DRAWS: usize = 100_000;
const C6_FIELD_DRAWS: u64 = 20_000;
const C8_SUP: f64 = 1e-4;
const C9_REL: f64 = 0.05;
const C10_CONTROL: f64 = 1e-10;
const C10_SECONDS: f64 = 1800.0;

const LAMINATE: &str = "preset = \"laminate\"\naxis = 1\nlow = 1.0\nhigh = 4.0";
const CONSTANT: &str = "preset = \"constant\"\nmatrix = { a11 = 1.5, a12 = 0.3, a22 = 0.8 }";

type Check = Result<(bool, String)>;

fn config(head: &str, preset: &str) -> ExperimentConfig {
    parse_config_str(&format!("{head}\n[coefficient]\n{preset}\n")).expect("valid acceptance config")
}

fn laminate_spec() -> CoefficientSpec {
    CoefficientSpec::Laminate { axis: 1, low: 1.0, high: 4.0 }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn c1() -> Check {
    let t = Instant::now();
    let a = make_coefficient_at(&laminate_spec(), 128)?;
    let (hm, _) = homogenise(&a, DEFAULT_TOLERANCE)?;
    let e11 = rel(hm.a_hat.a11, 1.6);
    let e22 = rel(hm.a_hat.a22, 2.5);
    let e12 = hm.a_hat.a12.abs() / 2.5;
    let m = Sym2::new(1.5, 0.3, 0.8);
    let c = make_coefficient_at(&CoefficientSpec::Constant { matrix: m }, 128)?;
    let (hc, chi) = homogenise(&c, DEFAULT_TOLERANCE)?;
    let ce = hc.a_hat.max_abs_diff(&m);
    let chi_zero = chi.chi.iter().all(|v| v.iter().all(|x| *x == 0.0));
    let secs = t.elapsed().as_secs_f64();
    let ok = e11 < C1_REL && e22 < C1_REL && e12 < C1_REL && ce < C1_CONST && chi_zero && secs < C1_SECONDS;
    Ok((
        ok,
        format!(
            "laminate a_hat = {} (rel err {e11:.1e}, {e22:.1e}, {e12:.1e}); constant |a_hat - a| = {ce:.1e}, chi == 0: {chi_zero}; {secs:.2}s",
            hm.a_hat
        ),
    ))
}

fn spd(rng: &mut impl Rng, lo: f64, hi: f64) -> Sym2 {
    let l1 = rng.random_range(lo..hi);
    let l2 = rng.random_range(lo..hi);
    let th: f64 = rng.random_range(0.0..PI);
    let (c, s) = (th.cos(), th.sin());
    Sym2::new(l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c)
}

fn c2() -> Check {
    let mut rng = keyed_rng(2, 0, 0);
    let mut specs = Vec::new();
    for k in 0..8 {
        let low = rng.random_range(0.2..2.0);
        specs.push((CoefficientSpec::Laminate { axis: 1 + (k % 2) as u8, low, high: low * rng.random_range(1.5..20.0) }, 64));
    }
    for _ in 0..4 {
        specs.push((CoefficientSpec::SmoothChecker { contrast: rng.random_range(1.5..50.0) }, 64));
    }
    for _ in 0..4 {
        specs.push((CoefficientSpec::Constant { matrix: spd(&mut rng, 0.3, 3.0) }, 1));
    }
    for k in 0..6 {
        let res = 16;
        // Scalar, diagonal and full-matrix random tables.
        let values = (0..res * res)
            .map(|_| {
                let m = match k % 3 {
                    0 => Sym2::scalar(rng.random_range(0.3..3.0)),
                    1 => Sym2::diag(rng.random_range(0.3..3.0), rng.random_range(0.3..3.0)),
                    _ => spd(&mut rng, 0.5, 3.0),
                };
                m.as_rows()
            })
            .collect();
        specs.push((CoefficientSpec::UserTable { resolution: res, values }, res));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut failed = Vec::new();
    for (i, (s, res)) in specs.iter().enumerate() {
        let a = make_coefficient_at(s, *res)?;
        let (hm, _) = homogenise(&a, 1e-11)?;
        let (lo, hi) = (a.harmonic_mean(), a.arithmetic_mean());
        for t in 0..32 {
            let th = t as f64 * PI / 32.0;
            let x = [th.cos(), th.sin()];
            let v = hm.a_hat.quad(x);
            let gap = (lo.quad(x) - v).max(v - hi.quad(x));
            worst = worst.max(gap);
            if gap > C2_TOL && !failed.contains(&i) {
                failed.push(i);
            }
        }
    }
    Ok((failed.is_empty(), format!("{} presets x 32 directions, worst violation {worst:.2e}, failing presets {failed:?}", specs.len())))
}

/// C3 to C5 share one pass over the kernel ladder.
struct KernelSuite {
    reports: Vec<ConvergenceReport>,
    control: Vec<ConvergenceReport>,
    secs: f64,
}

fn kernel_suite() -> Result<KernelSuite> {
    let t = Instant::now();
    let cfg = config("n = 63\nepsilons = [0.25, 0.125, 0.0625, 0.03125]\norders = [2, 3]", LAMINATE);
    let reports = run_kernel_suite(&cfg)?;
    let secs = t.elapsed().as_secs_f64();
    let cc = config("n = 63\nepsilons = [0.25, 0.125, 0.0625, 0.03125]\norders = [2, 3]\nexperiments = [\"wick\"]", CONSTANT);
    let control = run_kernel_suite(&cc)?;
    Ok(KernelSuite { reports, control, secs })
}

fn find<'a>(s: &'a KernelSuite, name: &str) -> &'a ConvergenceReport {
    s.reports.iter().find(|r| r.name == name).expect("report present")
}

fn c3(s: &KernelSuite) -> Check {
    let r = find(s, "semigroup");
    let ok = r.passed && r.failures == 0 && s.secs < C3_SECONDS;
    Ok((ok, format!("{}; non-converged power iterations {}; ladder {:.0}s", r.summary(), r.failures, s.secs)))
}

fn c4(s: &KernelSuite) -> Check {
    let r = find(s, "rho_diff");
    Ok((r.passed, r.summary()))
}

fn c5(s: &KernelSuite) -> Check {
    let mut ok = true;
    let mut msg = Vec::new();
    for m in [2, 3] {
        let r = find(s, &format!("wick_m{m}"));
        ok &= r.passed;
        msg.push(r.summary());
    }
    let worst = s.control.iter().flat_map(|r| r.rungs.iter().map(|g| g.mean.abs())).fold(0.0, f64::max);
    ok &= worst <= C5_CONTROL;
    msg.push(format!("constant control max {worst:.1e}"));
    Ok((ok, msg.join(" | ")))
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn c6() -> Check {
    let c: f64 = 1.7;
    let mut rng = keyed_rng(6, 0, 0);
    let xs: Vec<f64> = (0..C6_SCALAR_DRAWS).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); c.sqrt() * z }).collect();
    let h: Vec<Vec<f64>> = (0..=4).map(|m| xs.iter().map(|&x| hermite(m, x, c)).collect()).collect();
    let mut ok = true;
    let mut worst = 0.0f64;
    for m in 1..=4 {
        for k in 1..=m {
            let prod: Vec<f64> = h[m].iter().zip(&h[k]).map(|(a, b)| a * b).collect();
            let (mean, se) = mean_se(&prod);
            let target = if k == m { (1..=m).product::<usize>() as f64 * c.powi(m as i32) } else { 0.0 };
            let z = (mean - target).abs() / se;
            worst = worst.max(z);
            ok &= z <= C6_SIGMAS;
        }
    }
    // Field level on a 16^2 grid.
    let g = build_domain_grid(15)?;
    let a = make_coefficient_at(&laminate_spec(), 16)?;
    let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.25, g)?;
    let rho = stationary_covariance(&l, CovarianceMethod::Exact)?;
    let prof = RenormalisationProfile { values: rho.diagonal(), ..renormalisation_profile(&l, CovarianceMethod::Exact)? };
    let sampler = StationarySampler::new(&rho)?;
    let f = ScalarField::from_fn(g, |x, y| (PI * x).sin() * (PI * y).sin());
    let gg = ScalarField::from_fn(g, |x, y| x * (1.0 - x) * (2.0 * PI * y).sin().powi(2));
    let mut worst_field = 0.0f64;
    for m in 1..=3 {
        let v: Vec<f64> = (0..C6_FIELD_DRAWS)
            .map(|k| {
                let psi = sampler.draw(66, k);
                let w = wick_power(&psi, m, &prof).expect("shapes match").values;
                w.inner(&f).expect("same grid") * w.inner(&gg).expect("same grid")
            })
            .collect();
        let (mean, se) = mean_se(&v);
        let z = (mean - wick_moment_oracle(m, &rho, &f, &gg)?).abs() / se;
        worst_field = worst_field.max(z);
        ok &= z <= C6_SIGMAS;
    }
    Ok((ok, format!("scalar worst |z| = {worst:.2} over m, k <= 4 ({C6_SCALAR_DRAWS} draws); field worst |z| = {worst_field:.2} for m <= 3 ({C6_FIELD_DRAWS} draws)")))
}

fn c7() -> Check {
    let cfg = config("n = 63\nepsilons = [0.25, 0.125, 0.0625, 0.03125]\ndeltas = [0.125, 0.0625, 0.03125, 0.015625, 0.0078125]", LAMINATE);
    let r = run_renormalisation_divergence(&cfg)?;
    // Independent check of the prediction: closed-form layered means.
    let closed = (1.6f64 * 2.5).sqrt() * 0.5 * (1.0 + 0.5);
    let setup = Setup::new(&cfg)?;
    let quad = predicted_slope_ratio(&setup.a, setup.hm.a_hat);
    let off_spec = r.slope_ratio / 1.5 - 1.0;
    Ok((
        r.passed,
        format!(
            "{}; min R2 {:.4}; prediction quadrature {quad:.4} vs layered means {closed:.4}; ratio vs 1.5: {:+.1}%",
            r.summary(),
            r.min_r_squared,
            100.0 * off_spec
        ),
    ))
}

fn bump(g: DomainGrid, amp: f64) -> ScalarField {
    ScalarField::from_fn(g, |x, y| amp * (PI * x).sin() * (PI * y).sin() * (1.0 + x * y))
}

fn sup_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Semi-implicit march of `du = L u - u^3` on the whole solution.
fn direct_reference(l: &OperatorHandle, u0: &ScalarField, dt: f64, steps: usize) -> Result<Vec<Array1<f64>>> {
    let mut u = u0.values().clone();
    let mut out = vec![u.clone()];
    for _ in 0..steps {
        let rhs = &u - &u.mapv(|v| dt * v * v * v);
        u = l.solve_implicit(dt, rhs.view())?;
        out.push(u.clone());
    }
    Ok(out)
}

fn c8() -> Check {
    let g = build_domain_grid(31)?;
    let a = make_coefficient_at(&laminate_spec(), 128)?;
    let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.125, g)?;
    let u0 = bump(g, 3.0);
    let (dt, t_end) = (1e-4, 1.0);
    let steps = 10_000;
    let psi: Vec<ScalarField> = (0..=steps).map(|k| ScalarField::zeros(g).with_time(k as f64 * dt)).collect();
    let forc = build_forcings(&psi, &u0, &l, &RenormalisationProfile::constant(g, 0.0), 2)?;
    let y = solve_remainder(&l, &forc, t_end)?;
    drop(forc);
    let u = remainder_solution(&u0, &l, &y)?;
    let reference = direct_reference(&l, &u0, dt / 10.0, 10 * steps)?;
    let err_t = sup_diff(u[steps].values(), &reference[10 * steps]);
    let early = steps / 20;
    let err_early = sup_diff(u[early].values(), &reference[10 * early]);
    let dissipative = is_l2_dissipative(&u);
    let y0 = y.y[0].iter().all(|v| *v == 0.0);
    // Fields live on interior nodes; the boundary value is structurally zero.
    let boundary = u.iter().all(|f| f.values().len() == g.len());
    let ok = err_t < C8_SUP && dissipative && y0 && boundary;
    Ok((
        ok,
        format!(
            "sup error at T = 1: {err_t:.2e}; at t = 0.05: {err_early:.2e} (sup u = {:.2}); L2 dissipative {dissipative}; Y(0) = 0 {y0}",
            u[early].sup()
        ),
    ))
}

fn c9() -> Check {
    let g = build_domain_grid(15)?;
    let a = make_coefficient_at(&laminate_spec(), 16)?;
    let l = assemble_operator(OperatorCoefficient::Periodic(&a), 0.5, g)?;
    let (dt, t_end) = (2e-5, 0.5);
    let method = CovarianceMethod::ImplicitEuler { dt };
    let sigma = stationary_covariance(&l, method)?;
    let psi0 = StationarySampler::new(&sigma)?.draw(9, 1_000);
    let xi = sample_white_noise(g, dt, (0.0, t_end), 9, 0)?;
    let psi = evolve_linear(&l, &psi0, &xi, t_end)?;
    let c = renormalisation_profile(&l, method)?;
    let u0 = bump(g, 1.0);
    let run = |amp: f64| -> Result<ScalarField> {
        let u0 = u0.scaled(amp);
        let f = build_forcings(&psi, &u0, &l, &c, 2)?;
        let y = solve_remainder(&l, &f, t_end)?;
        Ok(remainder_solution(&u0, &l, &y)?.pop().expect("non-empty"))
    };
    let (u1, u100) = (run(1.0)?, run(100.0)?);
    let gap = lp_norm(&u1.sub(&u100)?, 2.0)?;
    let size = lp_norm(&u1, 2.0)?;
    Ok((gap < C9_REL * size, format!("||u - u_100||_L2 = {gap:.3e} vs ||u||_L2 = {size:.3e} ({:.2}%)", 100.0 * gap / size)))
}

fn c10() -> Check {
    let t = Instant::now();
    let head = "n = 31\nepsilons = [0.5, 0.25, 0.125, 0.0625]\nrealisations = 50\nt_end = 1.0\ndt = 0.001\nburn_in = 0.5\ndegree = 2\norders = [2, 3]";
    let r = run_full_convergence(&config(head, LAMINATE))?;
    let control = run_full_convergence(&config(&head.replace("realisations = 50", "realisations = 4"), CONSTANT))?;
    let worst = control.remainder.rungs.iter().map(|g| g.mean.abs()).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let ok = r.remainder.passed && worst <= C10_CONTROL && r.remainder.failures == 0 && secs < C10_SECONDS;
    let wick: Vec<String> = r.wick_paths.iter().map(|w| w.summary()).collect();
    Ok((
        ok,
        format!(
            "{}; SE {:?}; failures {}; control max {worst:.1e}; {secs:.0}s | {}",
            r.remainder.summary(),
            r.remainder.rungs.iter().map(|g| format!("{:.1e}", g.standard_error.unwrap_or(f64::NAN))).collect::<Vec<_>>(),
            r.remainder.failures,
            wick.join(" | ")
        ),
    ))
}

/// Runs a reduced config, persists it, reloads the manifest and re-runs.
fn c11() -> Check {
    let head = "n = 15\nepsilons = [0.5, 0.25, 0.125]\ndeltas = [0.125, 0.0625, 0.03125]\nrealisations = 3\nt_end = 0.1\ndt = 0.002\nburn_in = 0.02\nseed = 11\nexperiments = [\"wick\", \"rho\", \"semigroup\", \"renorm\", \"full\"]";
    let cfg = config(head, LAMINATE);
    let run = |c: &ExperimentConfig| -> Result<String> {
        let mut v = serde_json::to_value(run_kernel_suite(c)?)?.to_string();
        v.push_str(&serde_json::to_value(run_renormalisation_divergence(c)?)?.to_string());
        v.push_str(&serde_json::to_value(run_full_convergence(c)?)?.to_string());
        Ok(v)
    };
    let first = run(&cfg)?;
    let dir = std::env::temp_dir().join(format!("phi-homog-c11-{}", std::process::id()));
    persist_report(&dir, &RunManifest::new(&cfg, 0.0), &serde_json::json!({ "reports": first }), &[])?;
    let loaded = load_manifest(&dir)?;
    let second = run(&loaded.config)?;
    let _ = std::fs::remove_dir_all(&dir);
    let same_cfg = loaded.config == cfg;
    let ok = same_cfg && first == second;
    Ok((ok, format!("config round trip {same_cfg}; reports identical {} ({} bytes)", first == second, first.len())))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strict = args.iter().any(|a| a == "--strict");
    let wanted: Vec<&String> = args.iter().filter(|a| a.starts_with('C')).collect();
    let want = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w.as_str() == id);
    let mut results: Vec<(&str, bool, String, f64)> = Vec::new();
    let mut record = |id: &'static str, f: &mut dyn FnMut() -> Check| {
        if !want(id) {
            return;
        }
        let t = Instant::now();
        let (ok, msg) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        let secs = t.elapsed().as_secs_f64();
        println!("{id} {} ({secs:.1}s) {msg}", if ok { "PASS" } else { "FAIL" });
        results.push((id, ok, msg, secs));
    };
    record("C1", &mut c1);
    record("C2", &mut c2);
    if want("C3") || want("C4") || want("C5") {
        match kernel_suite() {
            Ok(s) => {
                record("C3", &mut || c3(&s));
                record("C4", &mut || c4(&s));
                record("C5", &mut || c5(&s));
            }
            Err(e) => {
                for id in ["C3", "C4", "C5"] {
                    record(id, &mut || Ok((false, format!("error: {e}"))));
                }
            }
        }
    }
    record("C6", &mut c6);
    record("C7", &mut c7);
    record("C8", &mut c8);
    record("C9", &mut c9);
    record("C10", &mut c10);
    record("C11", &mut c11);
    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed {:?}", results.len() - failed.len(), failed.len(), failed);
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
