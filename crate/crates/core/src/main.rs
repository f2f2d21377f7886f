use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use phi_homog::bench::{run_full_convergence, run_kernel_suite, run_renormalisation_divergence, Setup};
use phi_homog::config::{parse_config, persist_report, Experiment, ExperimentConfig, RunManifest, OUT_ENV};
use phi_homog::dump::{write_noise, write_path};
use phi_homog::dynamics::{assemble_solution, build_forcings, energy_diagnostics, solve_remainder};
use phi_homog::elliptic::verify_green_bounds;
use phi_homog::gaussian::{evolve_linear, renormalisation_profile, CovarianceMethod};
use phi_homog::lattice::ScalarField;
use phi_homog::noise::{sample_white_noise, step_count};
use phi_homog::Error;

#[derive(Parser)]
#[command(name = "phi-homog", version, about = "Homogenisation experiments for dynamical P(phi)_2")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the cell problem and print the homogenised matrix as JSON.
    CellSolve(Common),
    /// Weighted heat-kernel bounds across the epsilon ladder.
    GreenVerify(Common),
    /// One realisation of the full dynamics at a single epsilon.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scale to simulate; 0 selects the homogenised operator.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Convergence experiments listed under `experiments` in the config.
    Convergence(Common),
    /// Renormalisation-constant divergence across the delta ladder.
    RenormDiv(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and the environment.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with status 1 if any acceptance check fails.
    #[arg(long = "assert")]
    assert_checks: bool,
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidScale(_) | Error::Io(_) | Error::Json(_) | Error::HashMismatch { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Numerical(other.to_string()),
        }
    }
}

struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    assert: bool,
    started: Instant,
}

impl Run {
    fn new(c: &Common, sub: &str) -> Result<Self, Failure> {
        if let Some(t) = c.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global()
                .map_err(|e| Failure::Usage(e.to_string()))?;
        }
        let mut cfg = parse_config(&c.config)?;
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        let out = c
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| Path::new("out").join(sub));
        Ok(Self { cfg, out, assert: c.assert_checks, started: Instant::now() })
    }

    fn persist<R: serde::Serialize>(&self, report: &R, tables: &[(String, String)]) -> Result<(), Failure> {
        let manifest = RunManifest::new(&self.cfg, self.started.elapsed().as_secs_f64());
        persist_report(&self.out, &manifest, report, tables)?;
        eprintln!("wrote {}", self.out.display());
        Ok(())
    }

    fn verdict(&self, passed: bool) -> ExitCode {
        if self.assert && !passed {
            ExitCode::from(1)
        } else {
            ExitCode::SUCCESS
        }
    }
}

fn cell_solve(c: &Common) -> Result<ExitCode, Failure> {
    let run = Run::new(c, "cell")?;
    let setup = Setup::new(&run.cfg)?;
    let reuss = setup.a.harmonic_mean();
    let voigt = setup.a.arithmetic_mean();
    let a_hat = setup.hm.a_hat;
    let lo = a_hat.eigenvalues().0;
    let bracket = (a_hat.quad([1.0, 0.0]) >= reuss.quad([1.0, 0.0]) - 1e-8)
        && (a_hat.quad([1.0, 0.0]) <= voigt.quad([1.0, 0.0]) + 1e-8)
        && (a_hat.quad([0.0, 1.0]) >= reuss.quad([0.0, 1.0]) - 1e-8)
        && (a_hat.quad([0.0, 1.0]) <= voigt.quad([0.0, 1.0]) + 1e-8)
        && lo > 0.0;
    let body = json!({
        "a_hat": a_hat,
        "asymmetry": setup.hm.asymmetry,
        "arithmetic_mean": voigt,
        "harmonic_mean": reuss,
        "cell_resolution": setup.a.resolution(),
        "bracket_holds": bracket,
    });
    println!("{}", serde_json::to_string_pretty(&body).map_err(Error::from)?);
    run.persist(&body, &[])?;
    Ok(run.verdict(bracket))
}

fn green_verify(c: &Common) -> Result<ExitCode, Failure> {
    let run = Run::new(c, "green")?;
    let setup = Setup::new(&run.cfg)?;
    let l0 = setup.operator(0.0)?;
    let ops = run.cfg.epsilons.iter().map(|&e| setup.operator(e)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<_> = ops.iter().collect();
    let report = verify_green_bounds(&refs, &l0, &[0.01, 0.05, 0.1, 0.25])?;
    print!("{}", report.to_csv());
    run.persist(&report, &[("green.csv".into(), report.to_csv())])?;
    let finite = report.rows.iter().all(|r| r.pointwise_stat.is_finite() && r.gradient_stat.is_finite());
    Ok(run.verdict(finite))
}

fn simulate(c: &Common, epsilon: Option<f64>) -> Result<ExitCode, Failure> {
    let run = Run::new(c, "simulate")?;
    let cfg = &run.cfg;
    let setup = Setup::new(cfg)?;
    let eps = epsilon.unwrap_or(cfg.epsilons[0]);
    let l = setup.operator(eps)?;
    let steps = step_count(cfg.dt, (0.0, cfg.t_end))?;
    let xi = sample_white_noise(setup.grid, cfg.dt, (0.0, cfg.t_end), cfg.seed, 0)?;
    let psi = evolve_linear(&l, &ScalarField::zeros(setup.grid).with_time(0.0), &xi, cfg.t_end)?;
    let c_prof = renormalisation_profile(&l, CovarianceMethod::ImplicitEuler { dt: cfg.dt })?;
    let u0 = phi_homog::bench::centred_bump(setup.grid, cfg.test_radius).scaled(cfg.u0_amplitude);
    let forcings = build_forcings(&psi, &u0, &l, &c_prof, cfg.degree)?;
    let y = solve_remainder(&l, &forcings, cfg.t_end)?;
    let phi = assemble_solution(&psi, &u0, &l, &y)?;
    let sampled: Vec<ScalarField> =
        phi.iter().enumerate().filter(|(j, _)| j % cfg.sample_every == 0 || *j == steps).map(|(_, f)| f.clone()).collect();
    let u = phi_homog::dynamics::remainder_solution(&u0, &l, &y)?;
    let energy = energy_diagnostics(&u, &[2, 4], cfg.degree)?;
    std::fs::create_dir_all(&run.out).map_err(Error::from)?;
    write_noise(&run.out.join("noise.bin"), &xi)?;
    write_path(&run.out.join("phi.bin"), &sampled)?;
    let body = json!({
        "epsilon": eps,
        "steps": steps,
        "final_sup": phi.last().map(|f| f.sup()),
        "sup_weighted_energy": energy.sup_weighted,
    });
    println!("{}", serde_json::to_string_pretty(&body).map_err(Error::from)?);
    run.persist(&body, &[("energy.csv".into(), energy.to_csv())])?;
    Ok(ExitCode::SUCCESS)
}

fn convergence(c: &Common) -> Result<ExitCode, Failure> {
    let run = Run::new(c, "convergence")?;
    let cfg = &run.cfg;
    let mut passed = true;
    let mut tables = Vec::new();
    let mut body = serde_json::Map::new();
    for r in run_kernel_suite(cfg)? {
        println!("{}", r.summary());
        passed &= r.passed;
        tables.push((r.csv_name(), r.to_csv()));
        body.insert(r.name.clone(), serde_json::to_value(&r).map_err(Error::from)?);
    }
    if cfg.runs(Experiment::Renorm) {
        let r = run_renormalisation_divergence(cfg)?;
        println!("{}", r.summary());
        passed &= r.passed;
        tables.push(("renorm_div.csv".into(), r.to_csv()));
        body.insert("renorm_div".into(), serde_json::to_value(&r).map_err(Error::from)?);
    }
    if cfg.runs(Experiment::Full) {
        let r = run_full_convergence(cfg)?;
        for s in std::iter::once(&r.remainder).chain(&r.wick_paths) {
            println!("{}", s.summary());
        }
        passed &= r.remainder.passed;
        tables.push(("full_convergence.csv".into(), r.to_csv()));
        body.insert("full_convergence".into(), serde_json::to_value(&r).map_err(Error::from)?);
    }
    run.persist(&body, &tables)?;
    Ok(run.verdict(passed))
}

fn renorm_div(c: &Common) -> Result<ExitCode, Failure> {
    let run = Run::new(c, "renorm")?;
    let r = run_renormalisation_divergence(&run.cfg)?;
    println!("{}", r.summary());
    run.persist(&r, &[("renorm_div.csv".into(), r.to_csv())])?;
    Ok(run.verdict(r.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::CellSolve(c) => cell_solve(c),
        Command::GreenVerify(c) => green_verify(c),
        Command::Simulate { common, epsilon } => simulate(common, *epsilon),
        Command::Convergence(c) => convergence(c),
        Command::RenormDiv(c) => renorm_div(c),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
