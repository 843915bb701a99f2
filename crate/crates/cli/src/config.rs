//! Experiment configuration. One TOML file describes the model and every
//! numerical knob; everything except the model block has a default.

use std::path::PathBuf;

use adiabatic_core::adiabatic::BranchOptions;
use adiabatic_core::eigen::EigenOptions;
use adiabatic_core::expr::Expr;
use adiabatic_core::leafwise::LeafQuadrature;
use adiabatic_core::spectra::DEFAULT_ENUMERATION_BUDGET;
use adiabatic_core::TestFunction;
use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grade: GradeConfig,
    #[serde(default)]
    pub h_schedule: Schedule,
    #[serde(default)]
    pub lambda_grid: Grid,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub heat: HeatConfig,
    #[serde(default)]
    pub branches: BranchesConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub leafwise: LeafwiseConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Linear foliation of `Tⁿ` spanned by the rows of `span`.
    Flat { id: String, span: Vec<Vec<Scalar>> },
    /// `a(x,y)dx² + b(y)dy²` on an `nx × ny` grid.
    Fibered {
        id: String,
        a: String,
        b: String,
        #[serde(default = "default_grid_size")]
        nx: usize,
        #[serde(default = "default_grid_size")]
        ny: usize,
    },
}

impl ModelConfig {
    pub fn id(&self) -> &str {
        match self {
            ModelConfig::Flat { id, .. } | ModelConfig::Fibered { id, .. } => id,
        }
    }
}

/// A span entry: a number, or a constant expression such as `"3/2"` or
/// `"sqrt(2)"`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Expression(String),
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GradeConfig {
    #[serde(default)]
    pub tangential: usize,
    #[serde(default)]
    pub transverse: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Schedule {
    Explicit(Vec<f64>),
    Geometric { h0: f64, factor: f64, count: usize },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Geometric {
            h0: 0.2,
            factor: 0.5,
            count: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Grid {
    Explicit(Vec<f64>),
    Linspace { start: f64, stop: f64, count: usize },
}

impl Default for Grid {
    fn default() -> Self {
        Grid::Linspace {
            start: 0.0,
            stop: 100.0,
            count: 11,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Cutoff for exact enumeration on flat models.
    #[serde(default = "default_lambda_max")]
    pub lambda_max: f64,
    /// Number of eigenvalues solved on fibered models.
    #[serde(default = "default_count")]
    pub count: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            lambda_max: default_lambda_max(),
            count: default_count(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Number of eigenvalues solved per scale on fibered models.
    #[serde(default = "default_sweep_count")]
    pub count: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            count: default_sweep_count(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HeatConfig {
    #[serde(default = "default_times")]
    pub t: Vec<f64>,
    /// Flat cutoff; by default `e^{−t λ_max}` is below 1e-17 for every `t`.
    #[serde(default)]
    pub lambda_max: Option<f64>,
    /// Number of eigenvalues solved on fibered models.
    #[serde(default = "default_count")]
    pub count: usize,
    /// Extra test functions whose traces are compared with the prediction.
    #[serde(default)]
    pub functions: Vec<TestFunction>,
}

impl Default for HeatConfig {
    fn default() -> Self {
        HeatConfig {
            t: default_times(),
            lambda_max: None,
            count: default_count(),
            functions: Vec::new(),
        }
    }
}

impl HeatConfig {
    pub fn flat_cutoff(&self) -> f64 {
        self.lambda_max.unwrap_or_else(|| {
            let t_min = self.t.iter().copied().fold(f64::INFINITY, f64::min);
            40.0 / t_min
        })
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BranchesConfig {
    #[serde(default = "default_branch_count")]
    pub count: usize,
    #[serde(default = "default_guard")]
    pub guard: usize,
    /// `0` disables the finite-difference check.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_min_overlap")]
    pub min_overlap: f64,
}

impl Default for BranchesConfig {
    fn default() -> Self {
        BranchesConfig {
            count: default_branch_count(),
            guard: default_guard(),
            fd_step: default_fd_step(),
            min_overlap: default_min_overlap(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_dense_threshold")]
    pub dense_threshold: usize,
    #[serde(default = "default_filter_degree")]
    pub filter_degree: usize,
    #[serde(default = "default_matvecs")]
    pub matvecs_per_eigenvalue: usize,
    #[serde(default = "default_budget")]
    pub enumeration_budget: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tolerance: default_tolerance(),
            dense_threshold: default_dense_threshold(),
            filter_degree: default_filter_degree(),
            matvecs_per_eigenvalue: default_matvecs(),
            enumeration_budget: default_budget(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LeafwiseConfig {
    /// Atoms above this are dropped from atomic distributions.
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    /// Number of grid rows used as leaves; `0` means every row.
    #[serde(default)]
    pub rows: usize,
}

impl Default for LeafwiseConfig {
    fn default() -> Self {
        LeafwiseConfig {
            tau_max: default_tau_max(),
            rows: 0,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_grid_size() -> usize {
    64
}
fn default_lambda_max() -> f64 {
    100.0
}
fn default_count() -> usize {
    50
}
fn default_sweep_count() -> usize {
    200
}
fn default_times() -> Vec<f64> {
    vec![0.5]
}
fn default_branch_count() -> usize {
    5
}
fn default_guard() -> usize {
    4
}
fn default_fd_step() -> f64 {
    1e-4
}
fn default_min_overlap() -> f64 {
    0.5
}
fn default_tolerance() -> f64 {
    EigenOptions::default().tolerance
}
fn default_dense_threshold() -> usize {
    EigenOptions::default().dense_threshold
}
fn default_filter_degree() -> usize {
    EigenOptions::default().filter_degree
}
fn default_matvecs() -> usize {
    EigenOptions::default().matvecs_per_eigenvalue
}
fn default_budget() -> u64 {
    DEFAULT_ENUMERATION_BUDGET
}
fn default_tau_max() -> f64 {
    1e4
}

/// A parsed configuration with the raw text's hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub sha256: String,
}

pub fn load(path: &std::path::Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

pub fn parse(text: &str) -> Result<LoadedConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow!("{e}"))?;
    config.validate()?;
    Ok(LoadedConfig {
        config,
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{field}: must be positive and finite, got {v}");
    }
    Ok(())
}

impl ExperimentConfig {
    /// Field-level checks; every message starts with the offending key.
    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelConfig::Flat { id, span } => {
                check_id(id)?;
                if span.is_empty() {
                    bail!("model.span: needs at least one vector");
                }
                for (r, row) in span.iter().enumerate() {
                    for (c, s) in row.iter().enumerate() {
                        scalar_value(s).with_context(|| format!("model.span[{r}][{c}]"))?;
                    }
                }
            }
            ModelConfig::Fibered { id, a, b, nx, ny } => {
                check_id(id)?;
                Expr::parse(a).context("model.a")?;
                Expr::parse(b).context("model.b")?;
                if *nx < 2 {
                    bail!("model.nx: must be at least 2, got {nx}");
                }
                if *ny < 2 {
                    bail!("model.ny: must be at least 2, got {ny}");
                }
                if self.leafwise.rows != 0 && ny % self.leafwise.rows != 0 {
                    bail!("leafwise.rows: must divide model.ny = {ny}, got {}", self.leafwise.rows);
                }
            }
        }
        let schedule = self.h_values()?;
        for (i, &h) in schedule.iter().enumerate() {
            if !(h > 0.0 && h <= 1.0) {
                bail!("h_schedule[{i}]: must lie in (0, 1], got {h}");
            }
        }
        for (i, &l) in self.lambda_values()?.iter().enumerate() {
            if !l.is_finite() {
                bail!("lambda_grid[{i}]: must be finite, got {l}");
            }
        }
        check_positive("spectrum.lambda_max", self.spectrum.lambda_max)?;
        if self.spectrum.count == 0 {
            bail!("spectrum.count: must be positive");
        }
        if self.sweep.count == 0 {
            bail!("sweep.count: must be positive");
        }
        if self.heat.t.is_empty() {
            bail!("heat.t: needs at least one time");
        }
        for (i, &t) in self.heat.t.iter().enumerate() {
            check_positive(&format!("heat.t[{i}]"), t)?;
        }
        if let Some(l) = self.heat.lambda_max {
            check_positive("heat.lambda_max", l)?;
        }
        if self.heat.count == 0 {
            bail!("heat.count: must be positive");
        }
        if self.branches.count == 0 {
            bail!("branches.count: must be positive");
        }
        if !(self.branches.fd_step >= 0.0 && self.branches.fd_step.is_finite()) {
            bail!("branches.fd_step: must be nonnegative, got {}", self.branches.fd_step);
        }
        if !(0.0..=1.0).contains(&self.branches.min_overlap) {
            bail!(
                "branches.min_overlap: must lie in [0, 1], got {}",
                self.branches.min_overlap
            );
        }
        check_positive("solver.tolerance", self.solver.tolerance)?;
        if self.solver.filter_degree == 0 {
            bail!("solver.filter_degree: must be positive");
        }
        if self.solver.matvecs_per_eigenvalue == 0 {
            bail!("solver.matvecs_per_eigenvalue: must be positive");
        }
        if self.solver.enumeration_budget == 0 {
            bail!("solver.enumeration_budget: must be positive");
        }
        check_positive("leafwise.tau_max", self.leafwise.tau_max)?;
        Ok(())
    }

    pub fn h_values(&self) -> Result<Vec<f64>> {
        match &self.h_schedule {
            Schedule::Explicit(v) => {
                if v.is_empty() {
                    bail!("h_schedule: needs at least one scale");
                }
                Ok(v.clone())
            }
            Schedule::Geometric { h0, factor, count } => {
                if *count == 0 {
                    bail!("h_schedule.count: must be positive");
                }
                if !(*factor > 0.0 && *factor < 1.0) {
                    bail!("h_schedule.factor: must lie in (0, 1), got {factor}");
                }
                Ok((0..*count).map(|k| h0 * factor.powi(k as i32)).collect())
            }
        }
    }

    pub fn lambda_values(&self) -> Result<Vec<f64>> {
        match &self.lambda_grid {
            Grid::Explicit(v) => {
                if v.is_empty() {
                    bail!("lambda_grid: needs at least one level");
                }
                Ok(v.clone())
            }
            Grid::Linspace { start, stop, count } => match count {
                0 => bail!("lambda_grid.count: must be positive"),
                1 => Ok(vec![*start]),
                n => Ok((0..*n)
                    .map(|k| start + (stop - start) * k as f64 / (n - 1) as f64)
                    .collect()),
            },
        }
    }

    pub fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tolerance: self.solver.tolerance,
            dense_threshold: self.solver.dense_threshold,
            filter_degree: self.solver.filter_degree,
            matvecs_per_eigenvalue: self.solver.matvecs_per_eigenvalue,
            seed: self.seed,
        }
    }

    pub fn branch_options(&self) -> BranchOptions {
        BranchOptions {
            eigen: self.eigen_options(),
            guard: self.branches.guard,
            fd_step: (self.branches.fd_step > 0.0).then_some(self.branches.fd_step),
            min_overlap: self.branches.min_overlap,
        }
    }

    pub fn leaf_quadrature(&self) -> LeafQuadrature {
        match self.leafwise.rows {
            0 => LeafQuadrature::AllRows,
            n => LeafQuadrature::Rows(n),
        }
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        bail!("model.id: use letters, digits, `-` or `_`, got {id:?}");
    }
    Ok(())
}

pub fn scalar_value(s: &Scalar) -> Result<f64> {
    let v = match s {
        Scalar::Number(v) => *v,
        Scalar::Expression(text) => {
            let e = Expr::parse(text)?;
            if e.mentions_x() || e.mentions_y() {
                bail!("expected a constant, `{text}` depends on x or y");
            }
            e.eval(0.0, 0.0)
        }
    };
    if !v.is_finite() {
        bail!("not finite: {v}");
    }
    Ok(v)
}
