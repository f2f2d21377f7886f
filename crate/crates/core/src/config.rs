//! Experiment configuration (TOML), run manifests and report persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lattice::{admissible_denominators, build_domain_grid, is_commensurate, make_coefficient_at, CoefficientSpec};

/// Output directory override; the only setting read from the environment.
pub const OUT_ENV: &str = "PHI_HOMOG_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Wick,
    Rho,
    Semigroup,
    Renorm,
    Full,
}

/// Resolved configuration. Every field is present after [`parse_config`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub coefficient: CoefficientSpec,
    /// Interior nodes per axis.
    pub n: usize,
    #[serde(default = "defaults::cell_resolution")]
    pub cell_resolution: usize,
    #[serde(default = "defaults::cell_tolerance")]
    pub cell_tolerance: f64,
    /// Defaults to dyadic `1/4, 1/8, ...` with at least two grid steps per period.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "defaults::deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "defaults::orders")]
    pub orders: Vec<usize>,
    #[serde(default = "defaults::realisations")]
    pub realisations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::t_end")]
    pub t_end: f64,
    #[serde(default = "defaults::dt")]
    pub dt: f64,
    #[serde(default = "defaults::burn_in")]
    pub burn_in: f64,
    #[serde(default = "defaults::kappa")]
    pub kappa: f64,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    /// Half-degree of the nonlinearity `phi^{2 degree - 1}`.
    #[serde(default = "defaults::degree")]
    pub degree: usize,
    #[serde(default = "defaults::semigroup_time")]
    pub semigroup_time: f64,
    #[serde(default = "defaults::sobolev_p")]
    pub sobolev_p: f64,
    #[serde(default = "defaults::u0_amplitude")]
    pub u0_amplitude: f64,
    #[serde(default = "defaults::test_radius")]
    pub test_radius: f64,
    /// Time slices between evaluations of path statistics.
    #[serde(default = "defaults::sample_every")]
    pub sample_every: usize,
    #[serde(default = "defaults::experiments")]
    pub experiments: Vec<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

mod defaults {
    use super::Experiment;

    pub fn cell_resolution() -> usize {
        crate::lattice::DEFAULT_CELL_RESOLUTION
    }
    pub fn cell_tolerance() -> f64 {
        crate::cell::DEFAULT_TOLERANCE
    }
    pub fn deltas() -> Vec<f64> {
        (3..=7).map(|k| 0.5f64.powi(k)).collect()
    }
    pub fn orders() -> Vec<usize> {
        vec![2, 3]
    }
    pub fn realisations() -> usize {
        50
    }
    pub fn t_end() -> f64 {
        1.0
    }
    pub fn dt() -> f64 {
        1e-3
    }
    pub fn burn_in() -> f64 {
        0.5
    }
    pub fn kappa() -> f64 {
        0.02
    }
    pub fn beta() -> f64 {
        0.05
    }
    pub fn degree() -> usize {
        2
    }
    pub fn semigroup_time() -> f64 {
        0.25
    }
    pub fn sobolev_p() -> f64 {
        4.0
    }
    pub fn u0_amplitude() -> f64 {
        1.0
    }
    pub fn test_radius() -> f64 {
        0.35
    }
    pub fn sample_every() -> usize {
        10
    }
    pub fn experiments() -> Vec<Experiment> {
        vec![Experiment::Wick, Experiment::Rho, Experiment::Semigroup]
    }
}

impl ExperimentConfig {
    /// Minimal configuration with every default applied.
    pub fn new(coefficient: CoefficientSpec, n: usize) -> Result<Self> {
        let text = toml::to_string(&Minimal { coefficient, n }).map_err(|e| Error::Config(e.to_string()))?;
        parse_config_str(&text)
    }

    /// SHA-256 over the canonical JSON of every field except `out`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_vec(&c).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn runs(&self, e: Experiment) -> bool {
        self.experiments.contains(&e)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    fn validate(&mut self) -> Result<()> {
        let grid = build_domain_grid(self.n)?;
        let a = make_coefficient_at(&self.coefficient, self.cell_resolution)?;
        let admissible = admissible_denominators(&grid, &a);
        if self.epsilons.is_empty() {
            let constant = a.constant_value().is_some();
            self.epsilons = (2..)
                .map(|k| 1u64 << k)
                .take_while(|d| (self.n as u64 + 1) / d >= 2)
                .filter(|d| (self.n as u64 + 1).is_multiple_of(*d) && (constant || admissible.contains(d)))
                .map(|d| 1.0 / d as f64)
                .collect();
        }
        for &eps in &self.epsilons {
            let d = (1.0 / eps).round();
            let divides = d >= 1.0 && (self.n as u64 + 1).is_multiple_of(d as u64);
            let ok = eps > 0.0
                && (d * eps - 1.0).abs() < 1e-12
                && divides
                && (a.constant_value().is_some() || is_commensurate(&grid, &a, d as u64));
            if !ok {
                let hint: Vec<String> = admissible.iter().map(|d| format!("1/{d}")).collect();
                return Err(Error::InvalidScale(format!(
                    "epsilon = {eps} is not commensurate with n = {}; admissible: {}",
                    self.n,
                    hint.join(", ")
                )));
            }
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("epsilons must be strictly decreasing".into()));
        }
        if self.deltas.iter().any(|d| !(*d > 0.0 && *d < 0.5)) || self.deltas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("deltas must be strictly decreasing in (0, 1/2)".into()));
        }
        if self.orders.iter().any(|m| *m == 0 || *m > 5) {
            return Err(Error::Config("chaos orders must lie in 1..=5".into()));
        }
        if self.realisations < 2 {
            return Err(Error::Config("need at least two realisations for standard errors".into()));
        }
        if self.degree == 0 || self.degree > 3 {
            return Err(Error::Config(format!("degree must be 1, 2 or 3, got {}", self.degree)));
        }
        crate::noise::step_count(self.dt, (0.0, self.t_end))?;
        if self.burn_in > 0.0 {
            crate::noise::step_count(self.dt, (0.0, self.burn_in))?;
        }
        for (name, v) in [("kappa", self.kappa), ("beta", self.beta)] {
            if !(v > 0.0 && v < 0.5) {
                return Err(Error::Config(format!("{name} must lie in (0, 1/2), got {v}")));
            }
        }
        if !(self.sobolev_p >= 1.0) || !(self.test_radius > 0.0 && self.test_radius <= 0.5) || self.sample_every == 0 {
            return Err(Error::Config("sobolev_p >= 1, test_radius in (0, 1/2] and sample_every >= 1 required".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Minimal {
    n: usize,
    coefficient: CoefficientSpec,
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub tolerances: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, wall_clock_seconds: f64) -> Self {
        let tolerances = BTreeMap::from([
            ("cell_cg_relative_residual".to_string(), config.cell_tolerance),
            ("power_iteration_relative_change".to_string(), crate::elliptic::POWER_TOL),
            ("blow_up_guard".to_string(), crate::dynamics::BLOW_UP_GUARD),
        ]);
        Self {
            config: config.clone(),
            config_hash: config.hash(),
            seeds: vec![config.seed],
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds,
            tolerances,
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes the manifest, a JSON report and CSV tables, each CSV prefixed with
/// a `# manifest <hash>` line.
pub fn persist_report<R: Serialize>(
    dir: &Path,
    manifest: &RunManifest,
    report: &R,
    tables: &[(String, String)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;
    let mut body = serde_json::to_value(report)?;
    if let serde_json::Value::Object(map) = &mut body {
        map.insert("manifest_hash".into(), manifest.config_hash.clone().into());
    }
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&body)?)?;
    for (name, csv) in tables {
        std::fs::write(dir.join(name), format!("# manifest {}\n{csv}", manifest.config_hash))?;
    }
    Ok(())
}

/// Reads a manifest and checks the stored hash against its config.
pub fn load_manifest(dir: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut m: RunManifest = serde_json::from_str(&text)?;
    let found = m.config.hash();
    if found != m.config_hash {
        return Err(Error::HashMismatch { expected: m.config_hash, found });
    }
    m.config.validate()?;
    Ok(m)
}
