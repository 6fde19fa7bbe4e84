//! Experiment harness behind the `gpb` binary: JSON configuration, the
//! reproduce / boundary / diagonal experiments, eigenpair and conditioning
//! dumps, and deterministic CSV emission.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conditioning::{
    constrain, posterior, ConditionError, ConstrainedGp, FormSpec, Gp, Surface,
    DEFAULT_TRUNCATION,
};
use crate::domain::{self, ConstraintSet, ConstraintSpec, QuadratureKind};
use crate::kernels::Kernel;
use crate::spectral::{nystrom_eig, RkhsForm, SpectralError};
use crate::verify::{interpolant_build, reproduce_check, Interpolant, InterpolantBasis, VerifyError};

pub const EXIT_CONFIG_ERROR: u8 = 1;
pub const EXIT_NUMERICAL_ERROR: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG_ERROR,
            CliError::Numerical(_) => EXIT_NUMERICAL_ERROR,
        }
    }
}

impl From<ConditionError> for CliError {
    fn from(e: ConditionError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<VerifyError> for CliError {
    fn from(e: VerifyError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<domain::DomainError> for CliError {
    fn from(e: domain::DomainError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Reproduce,
    Boundary,
    Diagonal,
    Eig,
    Condition,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::Reproduce => "reproduce",
            Experiment::Boundary => "boundary",
            Experiment::Diagonal => "diagonal",
            Experiment::Eig => "eig",
            Experiment::Condition => "condition",
        }
    }
}

/// Bilinear-form backend selection as it appears in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    Interpolation,
    Spectral,
    Nugget { sigma2: f64 },
    SumKernel { q: Kernel },
}

impl BackendChoice {
    pub fn label(&self) -> &'static str {
        match self {
            BackendChoice::Interpolation => "interpolation",
            BackendChoice::Spectral => "spectral",
            BackendChoice::Nugget { .. } => "nugget",
            BackendChoice::SumKernel { .. } => "sum_kernel",
        }
    }

    fn parse_cli(text: &str) -> Result<Self, CliError> {
        if let Some(rest) = text.strip_prefix("nugget:") {
            let sigma2: f64 = rest
                .parse()
                .map_err(|_| CliError::Config(format!("bad nugget variance {rest:?}")))?;
            return Ok(BackendChoice::Nugget { sigma2 });
        }
        if let Some(rest) = text.strip_prefix("sum_kernel:") {
            let q: Kernel = serde_json::from_str(rest)
                .map_err(|e| CliError::Config(format!("bad sum-kernel spec: {e}")))?;
            return Ok(BackendChoice::SumKernel { q });
        }
        match text {
            "interpolation" => Ok(BackendChoice::Interpolation),
            "spectral" => Ok(BackendChoice::Spectral),
            other => Err(CliError::Config(format!(
                "unknown backend {other:?}; expected interpolation, spectral, \
                 nugget:<sigma2>, or sum_kernel:<kernel json>"
            ))),
        }
    }
}

/// Where the `condition` subcommand probes the conditioned process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    /// A deterministic grid over the domain.
    #[default]
    Grid,
    /// The constraint nodes themselves.
    Nodes,
}

/// Which function supplies the constraint values g.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFunction {
    /// The experiment's canonical test function.
    #[default]
    Experiment,
    /// g ≡ μ, the prior mean.
    PriorMean,
}

/// Fully resolved experiment configuration. All experiments use a zero
/// prior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub kernel: Kernel,
    pub backends: Vec<BackendChoice>,
    /// Basis-size sweep: conditioning-node count for the interpolation
    /// backend, retained eigenpair count for the series backends.
    pub node_counts: Vec<usize>,
    /// Quadrature resolution for series backends (and for the `eig` and
    /// `condition` subcommands).
    pub quadrature_nodes: usize,
    pub m_observations: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub test_grid: usize,
    pub truncation: f64,
    pub constraint: Option<ConstraintSpec>,
    pub probe: ProbeTarget,
    pub constraint_function: ConstraintFunction,
    /// J, the number of interpolation points defining f₁ and f₂.
    pub interpolation_points: usize,
    /// Also write a gnuplot-friendly `.dat` mirror next to the CSV.
    pub dat_mirror: bool,
}

impl ExperimentConfig {
    pub fn default_for(experiment: Experiment) -> Self {
        let dimension = match experiment {
            Experiment::Reproduce => 1,
            _ => 2,
        };
        ExperimentConfig {
            experiment,
            kernel: Kernel::squared_exponential(dimension, 1.0).expect("valid default kernel"),
            backends: vec![BackendChoice::Interpolation, BackendChoice::Spectral],
            node_counts: match experiment {
                Experiment::Reproduce => vec![5, 10, 20, 40],
                _ => vec![5, 10, 20, 40, 60],
            },
            quadrature_nodes: 64,
            m_observations: 10,
            seed: 1,
            output: None,
            test_grid: 200,
            truncation: DEFAULT_TRUNCATION,
            constraint: None,
            probe: ProbeTarget::default(),
            constraint_function: ConstraintFunction::default(),
            interpolation_points: 6,
            dat_mirror: false,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.node_counts.is_empty() {
            return Err(CliError::Config("node_counts must be nonempty".into()));
        }
        if self.node_counts.iter().any(|&n| n == 0) {
            return Err(CliError::Config("node_counts must be positive".into()));
        }
        if !self.node_counts.windows(2).all(|w| w[0] < w[1]) {
            return Err(CliError::Config(
                "node_counts must be strictly ascending".into(),
            ));
        }
        if self.quadrature_nodes == 0 {
            return Err(CliError::Config("quadrature_nodes must be positive".into()));
        }
        if self.test_grid < 2 {
            return Err(CliError::Config("test_grid must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.truncation) {
            return Err(CliError::Config("truncation must lie in [0, 1)".into()));
        }
        if self.interpolation_points < 2 {
            return Err(CliError::Config(
                "interpolation_points must be at least 2".into(),
            ));
        }
        let expected_dim = match self.experiment {
            Experiment::Reproduce => 1,
            Experiment::Boundary | Experiment::Diagonal => 2,
            Experiment::Eig | Experiment::Condition => self
                .constraint
                .as_ref()
                .map(|c| c.build().map(|s| s.ambient_dimension()))
                .transpose()
                .map_err(|e| CliError::Config(e.to_string()))?
                .unwrap_or(2),
        };
        if self.kernel.dimension() != expected_dim {
            return Err(CliError::Config(format!(
                "kernel dimension {} does not match the {} experiment (needs {})",
                self.kernel.dimension(),
                self.experiment.name(),
                expected_dim
            )));
        }
        Ok(())
    }

    /// Merge file values over defaults; later, CLI flags merge over this.
    fn from_partial(experiment: Experiment, partial: PartialConfig) -> Self {
        let mut cfg = ExperimentConfig::default_for(experiment);
        if let Some(v) = partial.kernel {
            cfg.kernel = v;
        }
        if let Some(v) = partial.backends {
            cfg.backends = v;
        }
        if let Some(v) = partial.node_counts {
            cfg.node_counts = v;
        }
        if let Some(v) = partial.quadrature_nodes {
            cfg.quadrature_nodes = v;
        }
        if let Some(v) = partial.m_observations {
            cfg.m_observations = v;
        }
        if let Some(v) = partial.seed {
            cfg.seed = v;
        }
        if let Some(v) = partial.output {
            cfg.output = Some(v);
        }
        if let Some(v) = partial.test_grid {
            cfg.test_grid = v;
        }
        if let Some(v) = partial.truncation {
            cfg.truncation = v;
        }
        if let Some(v) = partial.constraint {
            cfg.constraint = Some(v);
        }
        if let Some(v) = partial.probe {
            cfg.probe = v;
        }
        if let Some(v) = partial.constraint_function {
            cfg.constraint_function = v;
        }
        if let Some(v) = partial.interpolation_points {
            cfg.interpolation_points = v;
        }
        if let Some(v) = partial.dat_mirror {
            cfg.dat_mirror = v;
        }
        cfg
    }
}

/// Config file schema: every field optional so files can be sparse.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub experiment: Option<Experiment>,
    pub kernel: Option<Kernel>,
    pub backends: Option<Vec<BackendChoice>>,
    pub node_counts: Option<Vec<usize>>,
    pub quadrature_nodes: Option<usize>,
    pub m_observations: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub test_grid: Option<usize>,
    pub truncation: Option<f64>,
    pub constraint: Option<ConstraintSpec>,
    pub probe: Option<ProbeTarget>,
    pub constraint_function: Option<ConstraintFunction>,
    pub interpolation_points: Option<usize>,
    pub dat_mirror: Option<bool>,
}

/// Smooth two-dimensional target of the boundary experiment:
/// f(t₁,t₂) = ½·e^{0.2(t₁−½)²}·sin(πt₁/2) + e^{−t₂²}·cos(πt₂/2).
pub fn boundary_target(p: &[f64]) -> f64 {
    let (t1, t2) = (p[0], p[1]);
    0.5 * (0.2 * (t1 - 0.5).powi(2)).exp() * (std::f64::consts::FRAC_PI_2 * t1).sin()
        + (-t2 * t2).exp() * (std::f64::consts::FRAC_PI_2 * t2).cos()
}

/// Target of the diagonal experiment:
/// f(t₁,t₂) = t₂·√(1+t₁)·cos(πt₂)·sin(π(t₁−t₂)/2 + 1)·e^{(t₁+t₂)²/2}.
pub fn diagonal_target(p: &[f64]) -> f64 {
    let (t1, t2) = (p[0], p[1]);
    t2 * (1.0 + t1).sqrt()
        * (std::f64::consts::PI * t2).cos()
        * (std::f64::consts::FRAC_PI_2 * (t1 - t2) + 1.0).sin()
        * (0.5 * (t1 + t2).powi(2)).exp()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Test set of the boundary experiment: the unit-box boundary shrunk by 0.9,
/// sampled at `n` equispaced path parameters.
pub fn boundary_test_set(n: usize) -> Vec<Vec<f64>> {
    let path = domain::rect_boundary([-1.0, -1.0], [1.0, 1.0]).expect("unit box");
    (0..n)
        .map(|i| {
            let u = -1.0 + 2.0 * i as f64 / n as f64;
            let p = path.embed(u).expect("parameter in range");
            vec![0.9 * p[0], 0.9 * p[1]]
        })
        .collect()
}

/// Test set of the diagonal experiment: the two off-diagonal lines
/// (t, t ± 0.1) clipped to the unit box, `n` samples per offset.
pub fn diagonal_test_set(n_per_offset: usize) -> Vec<Vec<f64>> {
    let mut points = Vec::with_capacity(2 * n_per_offset);
    for t in linspace(-1.0, 0.9, n_per_offset) {
        points.push(vec![t, t + 0.1]);
    }
    for t in linspace(-0.9, 1.0, n_per_offset) {
        points.push(vec![t, t - 0.1]);
    }
    points
}

/// One boundary- or diagonal-style experiment instance: prior, constraint
/// geometry, target function, test set, and seeded interior observations.
pub struct ExperimentContext {
    pub prior: Gp,
    pub constraint: ConstraintSet,
    pub target: fn(&[f64]) -> f64,
    pub test_points: Vec<Vec<f64>>,
    pub obs_points: Vec<Vec<f64>>,
    pub obs_values: Vec<f64>,
    pub truncation: f64,
}

impl ExperimentContext {
    pub fn boundary(kernel: &Kernel, m: usize, seed: u64, test_grid: usize) -> Result<Self, CliError> {
        Self::build(
            kernel,
            domain::rect_boundary([-1.0, -1.0], [1.0, 1.0])?,
            boundary_target,
            boundary_test_set(test_grid),
            m,
            seed,
        )
    }

    pub fn diagonal(kernel: &Kernel, m: usize, seed: u64, test_grid: usize) -> Result<Self, CliError> {
        Self::build(
            kernel,
            domain::diagonal([-1.0, -1.0], [1.0, 1.0])?,
            diagonal_target,
            diagonal_test_set(test_grid),
            m,
            seed,
        )
    }

    fn build(
        kernel: &Kernel,
        constraint: ConstraintSet,
        target: fn(&[f64]) -> f64,
        test_points: Vec<Vec<f64>>,
        m: usize,
        seed: u64,
    ) -> Result<Self, CliError> {
        let obs_points = if m == 0 {
            Vec::new()
        } else {
            domain::latin_hypercube(m, 2, seed)?
        };
        let obs_values: Vec<f64> = obs_points.iter().map(|p| target(p)).collect();
        Ok(ExperimentContext {
            prior: Gp::new(kernel.clone()),
            constraint,
            target,
            test_points,
            obs_points,
            obs_values,
            truncation: DEFAULT_TRUNCATION,
        })
    }

    /// Condition with the chosen backend at basis size `n` (`n = 0` skips the
    /// constraint entirely), fold in the interior observations, and return
    /// the max test-set error of the predictive mean.
    pub fn max_error(
        &self,
        backend: &BackendChoice,
        n: usize,
        quadrature_nodes: usize,
    ) -> Result<f64, CliError> {
        let base: Box<dyn Surface> = if n == 0 {
            Box::new(self.prior.clone())
        } else {
            Box::new(self.constrained(backend, n, quadrature_nodes)?)
        };
        let surface: Box<dyn Surface> = if self.obs_points.is_empty() {
            base
        } else {
            Box::new(posterior(base, &self.obs_points, &self.obs_values, 0.0)?)
        };
        let mut max_err = 0.0f64;
        for p in &self.test_points {
            let err = (surface.mean_at(p)? - (self.target)(p)).abs();
            max_err = max_err.max(err);
        }
        Ok(max_err)
    }

    /// Build the constrained process for one backend cell.
    pub fn constrained(
        &self,
        backend: &BackendChoice,
        n: usize,
        quadrature_nodes: usize,
    ) -> Result<ConstrainedGp, CliError> {
        let spec = match backend {
            BackendChoice::Interpolation => FormSpec {
                backend: crate::conditioning::BackendSpec::Interpolation { nugget: 0.0 },
                resolution: n,
                rule: QuadratureKind::Midpoint,
                truncation: self.truncation,
            },
            BackendChoice::Spectral => FormSpec {
                backend: crate::conditioning::BackendSpec::Spectral { retained: Some(n) },
                resolution: quadrature_nodes,
                rule: QuadratureKind::Midpoint,
                truncation: self.truncation,
            },
            BackendChoice::Nugget { sigma2 } => FormSpec {
                backend: crate::conditioning::BackendSpec::Nugget {
                    retained: Some(n),
                    sigma2: *sigma2,
                },
                resolution: quadrature_nodes,
                rule: QuadratureKind::Midpoint,
                truncation: self.truncation,
            },
            BackendChoice::SumKernel { q } => FormSpec {
                backend: crate::conditioning::BackendSpec::SumKernel {
                    retained: Some(n),
                    q: q.clone(),
                },
                resolution: quadrature_nodes,
                rule: QuadratureKind::Midpoint,
                truncation: self.truncation,
            },
        };
        Ok(constrain(&self.prior, &self.constraint, self.target, &spec)?)
    }
}

fn csv_float(v: f64) -> String {
    // Shortest round-trip formatting keeps output byte-identical per seed.
    format!("{v}")
}

/// Figure-style reproduction experiment: interpolate J seeded points with a
/// kernel-section basis (f₁ ∈ H(T)) and a polynomial basis (f₂ ∉ H(T)),
/// then record each backend's max reproduction error per basis size.
pub fn run_reproduce(config: &ExperimentConfig) -> Result<String, CliError> {
    config.validate()?;
    let kernel = &config.kernel;
    let j = config.interpolation_points;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points: Vec<(f64, f64)> = linspace(-1.0, 1.0, j)
        .into_iter()
        .map(|x| (x, rng.random_range(-1.0..1.0)))
        .collect();
    let f1 = interpolant_build(&points, InterpolantBasis::KernelSections(kernel.clone()))?;
    let f2 = interpolant_build(&points, InterpolantBasis::Polynomial)?;
    let test_points: Vec<Vec<f64>> = linspace(-1.0, 1.0, config.test_grid)
        .into_iter()
        .map(|x| vec![x])
        .collect();
    let segment = domain::segment(vec![-1.0], vec![1.0])?;

    let mut rows = Vec::new();
    for (fname, f) in [("f1", &f1), ("f2", &f2)] {
        for backend in &config.backends {
            for &n in &config.node_counts {
                let form = reproduce_form(kernel, backend, n, config, &segment)?;
                let report = reproduce_check(&form, |p: &[f64]| f.eval(p[0]), &test_points)?;
                rows.push(format!(
                    "{fname},{},{n},{}",
                    backend.label(),
                    csv_float(report.max_error)
                ));
            }
        }
    }
    let mut out = String::from("function,backend,basis_count,max_error\n");
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}

fn reproduce_form(
    kernel: &Kernel,
    backend: &BackendChoice,
    n: usize,
    config: &ExperimentConfig,
    segment: &ConstraintSet,
) -> Result<RkhsForm, CliError> {
    match backend {
        BackendChoice::Interpolation => {
            let nodes: Vec<Vec<f64>> = linspace(-1.0, 1.0, n).into_iter().map(|x| vec![x]).collect();
            Ok(RkhsForm::interpolation(kernel, nodes, 0.0)?)
        }
        BackendChoice::Spectral => {
            let quad = segment.quadrature(config.quadrature_nodes, QuadratureKind::Midpoint)?;
            let basis = nystrom_eig(kernel, quad, config.truncation)?;
            Ok(RkhsForm::spectral(basis, Some(n))?)
        }
        BackendChoice::Nugget { sigma2 } => {
            let quad = segment.quadrature(config.quadrature_nodes, QuadratureKind::Midpoint)?;
            let basis = nystrom_eig(kernel, quad, config.truncation)?;
            Ok(RkhsForm::nugget(basis, Some(n), *sigma2)?)
        }
        BackendChoice::SumKernel { q } => {
            let quad = segment.quadrature(config.quadrature_nodes, QuadratureKind::Midpoint)?;
            Ok(RkhsForm::sum_kernel(
                kernel,
                q,
                quad,
                config.truncation,
                Some(n),
            )?)
        }
    }
}

fn run_geometry(
    config: &ExperimentConfig,
    make: fn(&Kernel, usize, u64, usize) -> Result<ExperimentContext, CliError>,
) -> Result<String, CliError> {
    config.validate()?;
    let mut ctx = make(
        &config.kernel,
        config.m_observations,
        config.seed,
        config.test_grid,
    )?;
    ctx.truncation = config.truncation;
    let mut out = String::from("backend,basis_count,max_error\n");
    for backend in &config.backends {
        for &n in &config.node_counts {
            let err = ctx.max_error(backend, n, config.quadrature_nodes)?;
            out.push_str(&format!("{},{n},{}\n", backend.label(), csv_float(err)));
        }
    }
    Ok(out)
}

/// Boundary experiment: condition on the unit-box boundary plus M interior
/// observations, report max error over the shrunk-boundary test set.
pub fn run_boundary(config: &ExperimentConfig) -> Result<String, CliError> {
    run_geometry(config, ExperimentContext::boundary)
}

/// Diagonal experiment: same harness with the diagonal constraint and the
/// off-diagonal test lines.
pub fn run_diagonal(config: &ExperimentConfig) -> Result<String, CliError> {
    run_geometry(config, ExperimentContext::diagonal)
}

fn config_constraint(config: &ExperimentConfig) -> Result<ConstraintSet, CliError> {
    match &config.constraint {
        Some(spec) => Ok(spec.build().map_err(|e| CliError::Config(e.to_string()))?),
        None => Ok(domain::diagonal([-1.0, -1.0], [1.0, 1.0])?),
    }
}

/// Eigenpair dump: one row per retained eigenpair, columns
/// index, eigenvalue, then the eigenfunction values at the nodes.
pub fn run_eig(config: &ExperimentConfig) -> Result<String, CliError> {
    config.validate()?;
    let constraint = config_constraint(config)?;
    let quad = constraint.quadrature(config.quadrature_nodes, QuadratureKind::Midpoint)?;
    let basis = nystrom_eig(&config.kernel, quad, config.truncation)?;
    let m = basis.node_count();
    let mut out = String::from("index,eigenvalue");
    for i in 0..m {
        out.push_str(&format!(",node_{i}"));
    }
    out.push('\n');
    for n in 0..basis.rank() {
        out.push_str(&format!("{n},{}", csv_float(basis.eigenvalues()[n])));
        for i in 0..m {
            out.push_str(&format!(",{}", csv_float(basis.eigenfunction_value(n, i))));
        }
        out.push('\n');
    }
    Ok(out)
}

fn default_target_for(constraint: &ConstraintSet, spec: &Option<ConstraintSpec>) -> fn(&[f64]) -> f64 {
    fn one_d(p: &[f64]) -> f64 {
        (1.3 * p[0]).sin()
    }
    if constraint.ambient_dimension() == 1 {
        return one_d;
    }
    match spec {
        Some(ConstraintSpec::RectBoundary { .. }) => boundary_target,
        _ => diagonal_target,
    }
}

/// Conditioning dump: probe coordinates, posterior mean, posterior variance.
pub fn run_condition(config: &ExperimentConfig) -> Result<String, CliError> {
    config.validate()?;
    let constraint = config_constraint(config)?;
    let d = constraint.ambient_dimension();
    let prior = Gp::new(config.kernel.clone());
    let backend = config
        .backends
        .first()
        .ok_or_else(|| CliError::Config("need at least one backend".into()))?;
    let target = default_target_for(&constraint, &config.constraint);
    let g: Box<dyn Fn(&[f64]) -> f64> = match config.constraint_function {
        ConstraintFunction::Experiment => Box::new(target),
        ConstraintFunction::PriorMean => {
            let mean = prior.mean.clone();
            Box::new(move |p: &[f64]| mean.eval(p))
        }
    };
    let spec = match backend {
        BackendChoice::Interpolation => FormSpec::interpolation(config.quadrature_nodes),
        BackendChoice::Spectral => FormSpec::spectral(config.quadrature_nodes, None),
        BackendChoice::Nugget { sigma2 } => {
            FormSpec::nugget(config.quadrature_nodes, None, *sigma2)
        }
        BackendChoice::SumKernel { q } => {
            FormSpec::sum_kernel(config.quadrature_nodes, None, q.clone())
        }
    };
    let cgp = constrain(&prior, &constraint, |p| g(p), &spec)?;
    let probes: Vec<Vec<f64>> = match config.probe {
        ProbeTarget::Nodes => cgp.form().nodes().to_vec(),
        ProbeTarget::Grid => {
            if d == 1 {
                linspace(-1.0, 1.0, config.test_grid)
                    .into_iter()
                    .map(|x| vec![x])
                    .collect()
            } else {
                domain::latin_hypercube(config.test_grid, d, config.seed)?
            }
        }
    };
    let mut out = String::new();
    for i in 0..d {
        out.push_str(&format!("s{i},"));
    }
    out.push_str("mean,variance\n");
    for p in &probes {
        for x in p {
            out.push_str(&format!("{},", csv_float(*x)));
        }
        let mean = cgp.mean(p)?;
        let var = cgp.cov(p, p)?;
        out.push_str(&format!("{},{}\n", csv_float(mean), csv_float(var)));
    }
    Ok(out)
}

/// Dispatch an already-resolved configuration.
pub fn run_experiment(config: &ExperimentConfig) -> Result<String, CliError> {
    match config.experiment {
        Experiment::Reproduce => run_reproduce(config),
        Experiment::Boundary => run_boundary(config),
        Experiment::Diagonal => run_diagonal(config),
        Experiment::Eig => run_eig(config),
        Experiment::Condition => run_condition(config),
    }
}

/// CSV body converted to a gnuplot-friendly .dat: `#`-prefixed header,
/// space-separated columns.
pub fn csv_to_dat(csv: &str) -> String {
    let mut out = String::new();
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            out.push_str("# ");
        }
        out.push_str(&line.replace(',', " "));
        out.push('\n');
    }
    out
}

#[derive(Debug, Parser)]
#[command(
    name = "gpb",
    about = "Gaussian process conditioning on boundaries, curves, and point sets",
    long_about = None,
    after_help = "\
CSV columns per subcommand:
  reproduce  function,backend,basis_count,max_error
  boundary   backend,basis_count,max_error
  diagonal   backend,basis_count,max_error
  eig        index,eigenvalue,node_0,...,node_{m-1}
  condition  s0[,s1,...],mean,variance

Exit codes: 0 success, 1 config error, 2 numerical failure.
The GPB_SEED environment variable overrides the config-file seed;
an explicit --seed flag wins over both."
)]
pub struct CliArgs {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reproducing-property convergence experiment on [-1, 1]
    Reproduce(CommonArgs),
    /// Boundary-constrained prediction on the unit box
    Boundary(CommonArgs),
    /// Diagonal-constrained prediction on the unit box
    Diagonal(CommonArgs),
    /// Dump the Nystrom eigenpairs of the constraint-set operator
    Eig(CommonArgs),
    /// Dump conditioned mean and variance at probe points
    Condition(CommonArgs),
}

impl Command {
    fn experiment(&self) -> Experiment {
        match self {
            Command::Reproduce(_) => Experiment::Reproduce,
            Command::Boundary(_) => Experiment::Boundary,
            Command::Diagonal(_) => Experiment::Diagonal,
            Command::Eig(_) => Experiment::Eig,
            Command::Condition(_) => Experiment::Condition,
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Reproduce(a)
            | Command::Boundary(a)
            | Command::Diagonal(a)
            | Command::Eig(a)
            | Command::Condition(a) => a,
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Run a different experiment than the subcommand implies
    #[arg(long)]
    pub experiment: Option<Experiment>,

    /// Inline kernel JSON, e.g. '{"family":"squared_exponential","params":{"dimension":2,"lengthscale":1.0}}'
    #[arg(long)]
    pub kernel: Option<String>,

    /// Backends: interpolation, spectral, nugget:<sigma2>, sum_kernel:<kernel json>
    #[arg(long, value_delimiter = ',')]
    pub backend: Option<Vec<String>>,

    /// Basis-size sweep, ascending (node counts / retained eigenpairs)
    #[arg(long, value_delimiter = ',')]
    pub nodes: Option<Vec<usize>>,

    /// Quadrature resolution for the series backends
    #[arg(long)]
    pub quad_nodes: Option<usize>,

    /// Number of interior observations M
    #[arg(long = "m-points")]
    pub m_points: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Output CSV path (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Test-set resolution
    #[arg(long)]
    pub test_grid: Option<usize>,

    /// Relative eigenvalue truncation threshold
    #[arg(long)]
    pub truncation: Option<f64>,

    /// Inline constraint JSON, e.g. '{"variant":"diagonal","params":{"lo":[-1,-1],"hi":[1,1]}}'
    #[arg(long)]
    pub constraint: Option<String>,

    /// Probe locations for `condition`
    #[arg(long, value_enum)]
    pub probe: Option<ProbeTarget>,

    /// Constraint values g for `condition`
    #[arg(long = "g", value_enum)]
    pub constraint_function: Option<ConstraintFunction>,

    /// Interpolation point count J for `reproduce`
    #[arg(long = "j-points")]
    pub interpolation_points: Option<usize>,

    /// Also write a gnuplot .dat mirror next to the CSV
    #[arg(long)]
    pub dat: bool,
}

/// Resolve a full configuration from defaults, config file, environment,
/// and flags (in that order of increasing precedence).
pub fn resolve_config(
    experiment: Experiment,
    args: &CommonArgs,
    env_seed: Option<&str>,
) -> Result<ExperimentConfig, CliError> {
    let partial = match &args.config {
        Some(path) => read_config_file(path)?,
        None => PartialConfig::default(),
    };
    let experiment = args
        .experiment
        .or(partial.experiment)
        .unwrap_or(experiment);
    let mut cfg = ExperimentConfig::from_partial(experiment, partial);
    if let Some(text) = env_seed {
        cfg.seed = text.parse().map_err(|_| {
            CliError::Config(format!("GPB_SEED must be an unsigned integer, got {text:?}"))
        })?;
    }
    if let Some(text) = &args.kernel {
        cfg.kernel = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("bad --kernel JSON: {e}")))?;
    }
    if let Some(list) = &args.backend {
        cfg.backends = list
            .iter()
            .map(|t| BackendChoice::parse_cli(t))
            .collect::<Result<_, _>>()?;
    }
    if let Some(nodes) = &args.nodes {
        cfg.node_counts = nodes.clone();
    }
    if let Some(v) = args.quad_nodes {
        cfg.quadrature_nodes = v;
    }
    if let Some(v) = args.m_points {
        cfg.m_observations = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.out {
        cfg.output = Some(v.clone());
    }
    if let Some(v) = args.test_grid {
        cfg.test_grid = v;
    }
    if let Some(v) = args.truncation {
        cfg.truncation = v;
    }
    if let Some(text) = &args.constraint {
        cfg.constraint = Some(
            serde_json::from_str(text)
                .map_err(|e| CliError::Config(format!("bad --constraint JSON: {e}")))?,
        );
    }
    if let Some(v) = args.probe {
        cfg.probe = v;
    }
    if let Some(v) = args.constraint_function {
        cfg.constraint_function = v;
    }
    if let Some(v) = args.interpolation_points {
        cfg.interpolation_points = v;
    }
    if args.dat {
        cfg.dat_mirror = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_config_file(path: &Path) -> Result<PartialConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{} line {}: {e}", path.display(), e.line())))
}

fn emit(config: &ExperimentConfig, csv: &str) -> Result<(), CliError> {
    match &config.output {
        None => {
            print!("{csv}");
            Ok(())
        }
        Some(path) => {
            fs::write(path, csv)
                .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
            if config.dat_mirror {
                let dat = path.with_extension("dat");
                fs::write(&dat, csv_to_dat(csv)).map_err(|e| {
                    CliError::Config(format!("cannot write {}: {e}", dat.display()))
                })?;
            }
            Ok(())
        }
    }
}

/// Full CLI entry point used by the binary. Returns the process exit code.
pub fn run_cli<I, T>(argv: I, env_seed: Option<&str>) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match CliArgs::try_parse_from(argv) {
        Ok(args) => args,
        Err(e) => {
            // Help and version requests are successes, not config errors.
            let code = if e.use_stderr() { EXIT_CONFIG_ERROR } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let common = args.command.args();
    let experiment = args.command.experiment();
    match resolve_config(experiment, common, env_seed)
        .and_then(|cfg| run_experiment(&cfg).map(|csv| (cfg, csv)))
        .and_then(|(cfg, csv)| emit(&cfg, &csv))
    {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn boundary_target_reference_values() {
        // sin(0) kills the first term; the second is e^0 * cos(0) = 1.
        assert_relative_eq!(boundary_target(&[0.0, 0.0]), 1.0, epsilon = 1e-12);
        // At (1, 1): 0.5 e^{0.05} sin(pi/2) + e^{-1} cos(pi/2).
        assert_relative_eq!(
            boundary_target(&[1.0, 1.0]),
            0.5 * (0.05f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn diagonal_target_reference_values() {
        // Leading factor t2 = 0.
        assert_relative_eq!(diagonal_target(&[0.0, 0.0]), 0.0, epsilon = 1e-15);
        // cos(pi/2) = 0 at t2 = 0.5.
        assert_relative_eq!(diagonal_target(&[0.0, 0.5]), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn boundary_test_set_lies_on_shrunk_boundary() {
        let pts = boundary_test_set(200);
        assert_eq!(pts.len(), 200);
        for p in &pts {
            let m = p[0].abs().max(p[1].abs());
            assert_relative_eq!(m, 0.9, epsilon = 1e-12);
        }
    }

    #[test]
    fn diagonal_test_set_stays_in_box_at_offset() {
        let pts = diagonal_test_set(200);
        assert_eq!(pts.len(), 400);
        for p in &pts {
            assert!(((p[0] - p[1]).abs() - 0.1).abs() < 1e-12);
            assert!(p.iter().all(|&x| (-1.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn config_defaults_validate() {
        for e in [
            Experiment::Reproduce,
            Experiment::Boundary,
            Experiment::Diagonal,
            Experiment::Eig,
            Experiment::Condition,
        ] {
            ExperimentConfig::default_for(e).validate().unwrap();
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = ExperimentConfig::default_for(Experiment::Boundary);
        cfg.backends.push(BackendChoice::Nugget { sigma2: 1e-4 });
        cfg.constraint = Some(ConstraintSpec::Diagonal {
            lo: [-1.0, -1.0],
            hi: [1.0, 1.0],
        });
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let partial: PartialConfig = serde_json::from_str(&text).unwrap();
        let back = ExperimentConfig::from_partial(cfg.experiment, partial);
        assert_eq!(back, cfg);
    }

    #[test]
    fn bad_node_counts_are_config_errors() {
        let mut cfg = ExperimentConfig::default_for(Experiment::Boundary);
        cfg.node_counts = vec![10, 5];
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        cfg.node_counts = vec![0, 5];
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        cfg.node_counts = vec![];
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn kernel_dimension_must_match_experiment() {
        let mut cfg = ExperimentConfig::default_for(Experiment::Boundary);
        cfg.kernel = Kernel::squared_exponential(1, 1.0).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn backend_cli_shorthand_parses() {
        assert_eq!(
            BackendChoice::parse_cli("interpolation").unwrap(),
            BackendChoice::Interpolation
        );
        assert_eq!(
            BackendChoice::parse_cli("nugget:0.01").unwrap(),
            BackendChoice::Nugget { sigma2: 0.01 }
        );
        assert!(BackendChoice::parse_cli("fourier").is_err());
    }

    #[test]
    fn dat_mirror_reformats_csv() {
        let dat = csv_to_dat("a,b\n1,2\n");
        assert_eq!(dat, "# a b\n1 2\n");
    }
}
