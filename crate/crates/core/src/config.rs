//! Experiment configuration: a flat `key = value` text format with
//! `[section]` headers, chosen so sweeps diff line-by-line.
//!
//! Grammar (see the README for the full field list):
//!
//! ```text
//! # comment                      blank lines and #-comments are ignored
//! [manifold]                     sections: manifold, model, run, tests
//! kind = sphere                  values are bare scalars, comma lists, or
//! dimension = 2                  the atom form  weight @ c1,c2,...
//! ```
//!
//! Keys may not repeat, except `atom` in `[model]`. Unknown sections or keys
//! are errors, with the offending line reported.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use crate::chains::SolverConfig;
use crate::error::{Error, Result};
use crate::geometry::{Manifold, ManifoldPoint};
use crate::sampling::{ModelKind, PopulationModel};

/// Off-manifold tolerance accepted for user-typed coordinates before
/// renormalization.
const COORD_SLACK: f64 = 1e-6;

/// A configuration problem with its location in the file.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn new(line: Option<usize>, field: Option<&str>, message: impl Into<String>) -> Self {
        Self {
            line,
            field: field.map(str::to_string),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, &self.field) {
            (Some(l), Some(k)) => write!(f, "line {l}, field `{k}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "field `{k}`: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Discrete { atoms: Vec<AtomSpec> },
    UniformCircle { radius: f64 },
    BallUniform { radius: f64 },
    Gaussian { sigma: f64, truncation: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomSpec {
    pub weight: f64,
    pub coords: Vec<f64>,
}

/// Thresholds and switches for the statistical reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestThresholds {
    /// Relative Frobenius tolerance for W-marginal covariance checks.
    pub covariance_rel_tol: f64,
    /// Relative Frobenius tolerance for the conditional covariance check.
    pub condcov_rel_tol: f64,
    /// Level of the energy-distance Gaussianity test.
    pub alpha: f64,
    /// Width of the martingale mean band in standard errors.
    pub mean_band_stderrs: f64,
    /// Stopped-path fraction above which trend results are inconclusive.
    pub stopped_frac_max: f64,
    /// Also check the time-epsilon0 marginal and its scaling discrimination.
    pub check_eps0_scaling: bool,
    /// Resamples for the conditional-moment check.
    pub mart_resamples: usize,
}

impl Default for TestThresholds {
    fn default() -> Self {
        Self {
            covariance_rel_tol: 0.10,
            condcov_rel_tol: 0.05,
            alpha: 0.01,
            mean_band_stderrs: 4.0,
            stopped_frac_max: 0.05,
            check_eps0_scaling: true,
            mart_resamples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub manifold: Manifold,
    pub model: ModelSpec,
    /// Ambient coordinates of the model center; canonical base point if
    /// absent.
    pub center: Option<Vec<f64>>,
    pub n_list: Vec<usize>,
    pub t_max: f64,
    pub stop_radius: f64,
    pub epsilon0: f64,
    pub replications: usize,
    pub seed: u64,
    pub mc_samples: usize,
    pub workers: usize,
    pub output_dir: Option<PathBuf>,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub thresholds: TestThresholds,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new(None, None, format!("cannot read {path:?}: {e}")))?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> std::result::Result<Self, ConfigError> {
        let raw = RawConfig::parse(text)?;

        let mut manifold_s = raw.section("manifold")?;
        let kind: String = manifold_s.take("kind")?;
        let dimension: usize = manifold_s.take("dimension")?;
        if dimension == 0 {
            return Err(manifold_s.invalid("dimension", "must be at least 1"));
        }
        let manifold = match kind.as_str() {
            "euclidean" => Manifold::Euclidean { dim: dimension },
            "sphere" => Manifold::Sphere { dim: dimension },
            "hyperbolic" => Manifold::Hyperbolic { dim: dimension },
            other => {
                return Err(manifold_s.invalid(
                    "kind",
                    format!("unknown manifold `{other}` (expected euclidean | sphere | hyperbolic)"),
                ))
            }
        };
        manifold_s.finish()?;

        let mut model_s = raw.section("model")?;
        let model_kind: String = model_s.take("kind")?;
        let model = match model_kind.as_str() {
            "discrete" => {
                let atom_lines = model_s.take_all("atom");
                if atom_lines.is_empty() {
                    return Err(model_s.invalid("atom", "discrete model needs atom lines"));
                }
                let mut atoms = Vec::new();
                for (line, value) in atom_lines {
                    atoms.push(parse_atom(line, &value)?);
                }
                ModelSpec::Discrete { atoms }
            }
            "uniform_circle" => ModelSpec::UniformCircle {
                radius: model_s.take("radius")?,
            },
            "ball_uniform" => ModelSpec::BallUniform {
                radius: model_s.take("radius")?,
            },
            "gaussian" => ModelSpec::Gaussian {
                sigma: model_s.take("sigma")?,
                truncation: model_s.take("truncation")?,
            },
            other => {
                return Err(model_s.invalid(
                    "kind",
                    format!(
                        "unknown model `{other}` (expected discrete | uniform_circle | \
                         ball_uniform | gaussian)"
                    ),
                ))
            }
        };
        let center: Option<Vec<f64>> = model_s.take_optional_list("center")?;
        model_s.finish()?;

        let mut run_s = raw.section("run")?;
        let n_list: Vec<usize> = run_s.take_list("n_list")?;
        let t_max: f64 = run_s.take("T")?;
        let stop_radius: f64 = run_s.take_or("r", 10.0)?;
        let epsilon0: f64 = run_s.take_or("epsilon0", 0.05 * t_max)?;
        let replications: usize = run_s.take("replications")?;
        let seed: u64 = run_s.take("seed")?;
        let mc_samples: usize = run_s.take_or("mc_samples", 1_000_000)?;
        let workers: usize = run_s.take_or("workers", 0)?;
        let output_dir: Option<PathBuf> = run_s.take_optional::<String>("output_dir")?.map(PathBuf::from);
        let solver_tol: f64 = run_s.take_or("solver_tol", crate::frechet::DEFAULT_TOL)?;
        let solver_max_iter: usize =
            run_s.take_or("solver_max_iter", crate::frechet::DEFAULT_MAX_ITER)?;
        run_s.finish()?;

        let defaults = TestThresholds::default();
        let thresholds = match raw.optional_section("tests") {
            None => defaults,
            Some(mut s) => {
                let t = TestThresholds {
                    covariance_rel_tol: s.take_or("covariance_rel_tol", defaults.covariance_rel_tol)?,
                    condcov_rel_tol: s.take_or("condcov_rel_tol", defaults.condcov_rel_tol)?,
                    alpha: s.take_or("alpha", defaults.alpha)?,
                    mean_band_stderrs: s.take_or("mean_band_stderrs", defaults.mean_band_stderrs)?,
                    stopped_frac_max: s.take_or("stopped_frac_max", defaults.stopped_frac_max)?,
                    check_eps0_scaling: s.take_or("check_eps0_scaling", defaults.check_eps0_scaling)?,
                    mart_resamples: s.take_or("mart_resamples", defaults.mart_resamples)?,
                };
                s.finish()?;
                t
            }
        };

        let cfg = Self {
            manifold,
            model,
            center,
            n_list,
            t_max,
            stop_radius,
            epsilon0,
            replications,
            seed,
            mc_samples,
            workers,
            output_dir,
            solver_tol,
            solver_max_iter,
            thresholds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> std::result::Result<(), ConfigError> {
        let field = |k: &str, msg: String| ConfigError::new(None, Some(k), msg);
        if self.n_list.is_empty() {
            return Err(field("n_list", "must be nonempty".into()));
        }
        if self.n_list.contains(&0) {
            return Err(field("n_list", "entries must be at least 1".into()));
        }
        if !self.n_list.windows(2).all(|w| w[0] < w[1]) {
            return Err(field("n_list", "must be strictly ascending".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(field("T", "must be positive".into()));
        }
        if !(self.stop_radius > 0.0) {
            return Err(field("r", "must be positive".into()));
        }
        if !(self.epsilon0 > 0.0 && self.epsilon0 < self.t_max) {
            return Err(field(
                "epsilon0",
                format!("must satisfy 0 < epsilon0 < T, got {}", self.epsilon0),
            ));
        }
        if self.replications == 0 {
            return Err(field("replications", "must be at least 1".into()));
        }
        if self.mc_samples == 0 {
            return Err(field("mc_samples", "must be at least 1".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(field("solver_tol", "must be positive".into()));
        }
        let t = &self.thresholds;
        for (k, v) in [
            ("covariance_rel_tol", t.covariance_rel_tol),
            ("condcov_rel_tol", t.condcov_rel_tol),
            ("mean_band_stderrs", t.mean_band_stderrs),
            ("stopped_frac_max", t.stopped_frac_max),
        ] {
            if !(v > 0.0) {
                return Err(field(k, "must be positive".into()));
            }
        }
        if !(t.alpha > 0.0 && t.alpha < 1.0) {
            return Err(field("alpha", "must be in (0, 1)".into()));
        }
        // Build the model once so support-rule violations surface at parse
        // time with a config diagnostic instead of mid-run.
        self.build_model()
            .map_err(|e| ConfigError::new(None, Some("model"), e.to_string()))?;
        Ok(())
    }

    pub fn center_point(&self) -> Result<ManifoldPoint> {
        match &self.center {
            None => Ok(self.manifold.canonical_base_point()),
            Some(c) => on_manifold(self.manifold, c)
                .map_err(|e| Error::Config(format!("center: {e}"))),
        }
    }

    pub fn build_model(&self) -> Result<PopulationModel> {
        let center = self.center_point()?;
        let kind = match &self.model {
            ModelSpec::UniformCircle { radius } => ModelKind::UniformCircle { radius: *radius },
            ModelSpec::BallUniform { radius } => ModelKind::BallUniform { radius: *radius },
            ModelSpec::Gaussian { sigma, truncation } => ModelKind::GaussianPushforward {
                sigma: *sigma,
                truncation: *truncation,
            },
            ModelSpec::Discrete { atoms } => {
                let mut points = Vec::with_capacity(atoms.len());
                let mut weights = Vec::with_capacity(atoms.len());
                for (i, a) in atoms.iter().enumerate() {
                    let p = on_manifold(self.manifold, &a.coords)
                        .map_err(|e| Error::Config(format!("atom {}: {e}", i + 1)))?;
                    points.push(p);
                    weights.push(a.weight);
                }
                ModelKind::Discrete {
                    atoms: points,
                    weights,
                }
            }
        };
        PopulationModel::new(center, kind)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.solver_tol,
            max_iter: self.solver_max_iter,
        }
    }
}

/// Accepts coordinates within `COORD_SLACK` of the manifold and
/// renormalizes them exactly onto it.
fn on_manifold(m: Manifold, coords: &[f64]) -> Result<ManifoldPoint> {
    if coords.len() != m.ambient_dim() {
        return Err(Error::DimensionMismatch {
            expected: m.ambient_dim(),
            got: coords.len(),
        });
    }
    let v = DVector::from_row_slice(coords);
    match m {
        Manifold::Euclidean { .. } => ManifoldPoint::new(m, v),
        Manifold::Sphere { .. } => {
            let n = v.norm();
            if (n - 1.0).abs() > COORD_SLACK {
                return Err(Error::InvalidPoint(format!(
                    "norm {n:.9} is more than {COORD_SLACK:.0e} away from 1"
                )));
            }
            ManifoldPoint::new(m, v / n)
        }
        Manifold::Hyperbolic { .. } => {
            let q = -m.metric_dot(&v, &v);
            if (q - 1.0).abs() > 2.0 * COORD_SLACK || v[v.len() - 1] <= 0.0 {
                return Err(Error::InvalidPoint(format!(
                    "Minkowski norm {:.9} is not within {COORD_SLACK:.0e} of -1 on the upper sheet",
                    -q
                )));
            }
            ManifoldPoint::new(m, v / q.sqrt())
        }
    }
}

fn parse_atom(line: usize, value: &str) -> std::result::Result<AtomSpec, ConfigError> {
    let (w, c) = value.split_once('@').ok_or_else(|| {
        ConfigError::new(
            Some(line),
            Some("atom"),
            "expected `weight @ c1,c2,...`",
        )
    })?;
    let weight: f64 = w.trim().parse().map_err(|_| {
        ConfigError::new(Some(line), Some("atom"), format!("bad weight `{}`", w.trim()))
    })?;
    let coords = c
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|_| {
            ConfigError::new(Some(line), Some("atom"), format!("bad coordinates `{}`", c.trim()))
        })?;
    Ok(AtomSpec { weight, coords })
}

struct RawConfig {
    /// (section, line, key, value)
    entries: Vec<(String, usize, String, String)>,
    sections_seen: BTreeSet<String>,
}

impl RawConfig {
    fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let mut entries = Vec::new();
        let mut sections_seen = BTreeSet::new();
        let mut current: Option<String> = None;
        for (idx, raw_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = match raw_line.split_once('#') {
                Some((before, _)) => before.trim(),
                None => raw_line.trim(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::new(Some(lineno), None, "unterminated section header"))?
                    .trim()
                    .to_string();
                if !matches!(name.as_str(), "manifold" | "model" | "run" | "tests") {
                    return Err(ConfigError::new(
                        Some(lineno),
                        None,
                        format!("unknown section `[{name}]`"),
                    ));
                }
                sections_seen.insert(name.clone());
                current = Some(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::new(Some(lineno), None, "expected `key = value` or `[section]`")
            })?;
            let section = current.clone().ok_or_else(|| {
                ConfigError::new(Some(lineno), None, "key before any [section] header")
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key != "atom"
                && entries
                    .iter()
                    .any(|(s, _, k, _)| *s == section && *k == key)
            {
                return Err(ConfigError::new(
                    Some(lineno),
                    Some(&key),
                    "duplicate key".to_string(),
                ));
            }
            entries.push((section, lineno, key, value));
        }
        Ok(Self {
            entries,
            sections_seen,
        })
    }

    fn section(&self, name: &str) -> std::result::Result<SectionReader, ConfigError> {
        if !self.sections_seen.contains(name) {
            return Err(ConfigError::new(
                None,
                None,
                format!("missing required section `[{name}]`"),
            ));
        }
        Ok(self.reader(name))
    }

    fn optional_section(&self, name: &str) -> Option<SectionReader> {
        self.sections_seen.contains(name).then(|| self.reader(name))
    }

    fn reader(&self, name: &str) -> SectionReader {
        SectionReader {
            section: name.to_string(),
            entries: self
                .entries
                .iter()
                .filter(|(s, _, _, _)| s == name)
                .map(|(_, l, k, v)| (*l, k.clone(), v.clone()))
                .collect(),
            consumed: BTreeSet::new(),
        }
    }
}

struct SectionReader {
    section: String,
    entries: Vec<(usize, String, String)>,
    consumed: BTreeSet<String>,
}

impl SectionReader {
    fn find(&mut self, key: &str) -> Option<(usize, String)> {
        self.consumed.insert(key.to_string());
        self.entries
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.clone()))
    }

    fn take<T: std::str::FromStr>(&mut self, key: &str) -> std::result::Result<T, ConfigError> {
        match self.find(key) {
            None => Err(ConfigError::new(
                None,
                Some(key),
                format!("missing in section `[{}]`", self.section),
            )),
            Some((line, v)) => v.parse().map_err(|_| {
                ConfigError::new(Some(line), Some(key), format!("cannot parse `{v}`"))
            }),
        }
    }

    fn take_optional<T: std::str::FromStr>(
        &mut self,
        key: &str,
    ) -> std::result::Result<Option<T>, ConfigError> {
        match self.find(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| {
                ConfigError::new(Some(line), Some(key), format!("cannot parse `{v}`"))
            }),
        }
    }

    fn take_or<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: T,
    ) -> std::result::Result<T, ConfigError> {
        Ok(self.take_optional(key)?.unwrap_or(default))
    }

    fn take_list<T: std::str::FromStr>(
        &mut self,
        key: &str,
    ) -> std::result::Result<Vec<T>, ConfigError> {
        match self.take_optional_list(key)? {
            Some(v) => Ok(v),
            None => Err(ConfigError::new(
                None,
                Some(key),
                format!("missing in section `[{}]`", self.section),
            )),
        }
    }

    fn take_optional_list<T: std::str::FromStr>(
        &mut self,
        key: &str,
    ) -> std::result::Result<Option<Vec<T>>, ConfigError> {
        match self.find(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<std::result::Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| {
                    ConfigError::new(Some(line), Some(key), format!("cannot parse list `{v}`"))
                }),
        }
    }

    fn take_all(&mut self, key: &str) -> Vec<(usize, String)> {
        self.consumed.insert(key.to_string());
        self.entries
            .iter()
            .filter(|(_, k, _)| k == key)
            .map(|(l, _, v)| (*l, v.clone()))
            .collect()
    }

    fn invalid(&self, key: &str, msg: impl Into<String>) -> ConfigError {
        let line = self.entries.iter().find(|(_, k, _)| k == key).map(|(l, _, _)| *l);
        ConfigError::new(line, Some(key), msg.into())
    }

    /// Errors on any key that was present but never requested, catching
    /// typos instead of silently ignoring them.
    fn finish(self) -> std::result::Result<(), ConfigError> {
        for (line, key, _) in &self.entries {
            if !self.consumed.contains(key) {
                return Err(ConfigError::new(
                    Some(*line),
                    Some(key),
                    format!("unknown key in section `[{}]`", self.section),
                ));
            }
        }
        Ok(())
    }
}
