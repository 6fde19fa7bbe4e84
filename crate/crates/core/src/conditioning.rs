//! Gaussian processes conditioned on function values over a constraint set:
//! the classical finite-point formulas, the RKHS-projection construction for
//! uncountable sets, composition with finite observations, and path sampling.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::domain::{ConstraintSet, DomainError, QuadratureKind};
use crate::kernels::{Kernel, KernelError};
use crate::linalg::{self, JitteredCholesky, LinalgError};
use crate::spectral::{nystrom_eig, RkhsForm, SpectralError};

/// Default relative eigenvalue cutoff: below 1e−12·λ₁ the reciprocal
/// amplifies quadrature noise past any signal.
pub const DEFAULT_TRUNCATION: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error(transparent)]
    Domain(#[from] DomainError),

    #[error(transparent)]
    Spectral(#[from] SpectralError),

    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("need {points} values for {points} points, got {values}")]
    ValueCountMismatch { points: usize, values: usize },

    #[error("conditioning needs at least one point")]
    NoPoints,

    #[error("noise variance must be nonnegative, got {0}")]
    NegativeNoise(f64),

    #[error(
        "inconsistent constraint: nodes {i} and {j} coincide but carry values {vi} and {vj}"
    )]
    InconsistentConstraint { i: usize, j: usize, vi: f64, vj: f64 },

    #[error("constraint set dimension {set} does not match kernel dimension {kernel}")]
    ConstraintDimensionMismatch { set: usize, kernel: usize },
}

/// Prior mean function.
#[derive(Clone)]
pub enum MeanFn {
    Zero,
    Constant(f64),
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl MeanFn {
    pub fn eval(&self, s: &[f64]) -> f64 {
        match self {
            MeanFn::Zero => 0.0,
            MeanFn::Constant(c) => *c,
            MeanFn::Custom(f) => f(s),
        }
    }
}

impl fmt::Debug for MeanFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanFn::Zero => write!(f, "MeanFn::Zero"),
            MeanFn::Constant(c) => write!(f, "MeanFn::Constant({c})"),
            MeanFn::Custom(_) => write!(f, "MeanFn::Custom(..)"),
        }
    }
}

/// A Gaussian process prior: mean function plus covariance kernel.
#[derive(Debug, Clone)]
pub struct Gp {
    pub mean: MeanFn,
    pub kernel: Kernel,
}

impl Gp {
    /// Zero-mean prior.
    pub fn new(kernel: Kernel) -> Self {
        Gp {
            mean: MeanFn::Zero,
            kernel,
        }
    }

    pub fn with_mean(mean: MeanFn, kernel: Kernel) -> Self {
        Gp { mean, kernel }
    }

    fn mean_vector(&self, points: &[Vec<f64>]) -> Vec<f64> {
        points.iter().map(|p| self.mean.eval(p)).collect()
    }
}

/// Anything with a mean function and covariance kernel: priors, finite
/// conditionals, constrained processes, and predictive posteriors.
pub trait Surface {
    fn dimension(&self) -> usize;
    fn mean_at(&self, s: &[f64]) -> Result<f64, ConditionError>;
    fn cov_at(&self, s1: &[f64], s2: &[f64]) -> Result<f64, ConditionError>;
}

impl Surface for Gp {
    fn dimension(&self) -> usize {
        self.kernel.dimension()
    }

    fn mean_at(&self, s: &[f64]) -> Result<f64, ConditionError> {
        self.kernel.check_point(s)?;
        Ok(self.mean.eval(s))
    }

    fn cov_at(&self, s1: &[f64], s2: &[f64]) -> Result<f64, ConditionError> {
        Ok(self.kernel.eval(s1, s2)?)
    }
}

impl<S: Surface + ?Sized> Surface for Box<S> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn mean_at(&self, s: &[f64]) -> Result<f64, ConditionError> {
        (**self).mean_at(s)
    }

    fn cov_at(&self, s1: &[f64], s2: &[f64]) -> Result<f64, ConditionError> {
        (**self).cov_at(s1, s2)
    }
}

/// The classical conditional mean and covariance given values at finitely
/// many points. Doubles as the brute-force oracle for the projection route.
#[derive(Debug)]
pub struct FiniteConditioned {
    prior: Gp,
    points: Vec<Vec<f64>>,
    chol: JitteredCholesky,
    alpha: DVector<f64>,
    noise_variance: f64,
}

/// Condition a prior on observations (tᵢ, xᵢ), optionally noisy:
/// μ₀(s) = μ(s) + k(s,𝐭)(k(𝐭,𝐭)+σ²I)⁻¹(𝐱−μ(𝐭)) and the matching covariance.
pub fn finite_condition(
    prior: &Gp,
    points: &[Vec<f64>],
    values: &[f64],
    noise_variance: f64,
) -> Result<FiniteConditioned, ConditionError> {
    if points.is_empty() {
        return Err(ConditionError::NoPoints);
    }
    if points.len() != values.len() {
        return Err(ConditionError::ValueCountMismatch {
            points: points.len(),
            values: values.len(),
        });
    }
    if noise_variance < 0.0 {
        return Err(ConditionError::NegativeNoise(noise_variance));
    }
    check_conflicting_duplicates(points, values)?;
    let mut gram = prior.kernel.gram(points, points)?;
    for i in 0..gram.nrows() {
        gram[(i, i)] += noise_variance;
    }
    let chol = linalg::cholesky_jittered(&gram, Some(points))?;
    let mean_t = prior.mean_vector(points);
    let residual: Vec<f64> = values
        .iter()
        .zip(&mean_t)
        .map(|(x, m)| x - m)
        .collect();
    let alpha = chol.factor.solve(&DVector::from_vec(residual));
    Ok(FiniteConditioned {
        prior: prior.clone(),
        points: points.to_vec(),
        chol,
        alpha,
        noise_variance,
    })
}

fn check_conflicting_duplicates(
    points: &[Vec<f64>],
    values: &[f64],
) -> Result<(), ConditionError> {
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if points[i] == points[j] && values[i] != values[j] {
                return Err(ConditionError::InconsistentConstraint {
                    i,
                    j,
                    vi: values[i],
                    vj: values[j],
                });
            }
        }
    }
    Ok(())
}

impl FiniteConditioned {
    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

impl Surface for FiniteConditioned {
    fn dimension(&self) -> usize {
        self.prior.kernel.dimension()
    }

    fn mean_at(&self, s: &[f64]) -> Result<f64, ConditionError> {
        let section = self.prior.kernel.section(s, &self.points)?;
        Ok(self.prior.mean.eval(s) + DVector::from_vec(section).dot(&self.alpha))
    }

    fn cov_at(&self, s1: &[f64], s2: &[f64]) -> Result<f64, ConditionError> {
        let k12 = self.prior.kernel.eval(s1, s2)?;
        let a = self.prior.kernel.section(s1, &self.points)?;
        let b = self.prior.kernel.section(s2, &self.points)?;
        let solved = self.chol.factor.solve(&DVector::from_vec(b));
        Ok(k12 - DVector::from_vec(a).dot(&solved))
    }
}

/// Backend choice for the RKHS form behind [`constrain`].
#[derive(Debug, Clone)]
pub enum BackendSpec {
    /// Gram-inverse projection on the constraint nodes; `nugget` is added to
    /// the Gram diagonal, recovering finite noisy conditioning.
    Interpolation { nugget: f64 },
    /// Truncated Nyström series; `retained = None` keeps the whole basis.
    Spectral { retained: Option<usize> },
    /// Operator-shifted series with eigenvalues λₙ + σ².
    Nugget {
        retained: Option<usize>,
        sigma2: f64,
    },
    /// Series under the k+q geometry for correlated constraint noise.
    SumKernel {
        retained: Option<usize>,
        q: Kernel,
    },
}

/// Backend plus discretization resolution for building an [`RkhsForm`] on a
/// constraint set.
#[derive(Debug, Clone)]
pub struct FormSpec {
    pub backend: BackendSpec,
    /// Quadrature node count for paths; ignored for finite point sets.
    pub resolution: usize,
    pub rule: QuadratureKind,
    pub truncation: f64,
}

impl FormSpec {
    pub fn interpolation(resolution: usize) -> Self {
        FormSpec {
            backend: BackendSpec::Interpolation { nugget: 0.0 },
            resolution,
            rule: QuadratureKind::Midpoint,
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn spectral(resolution: usize, retained: Option<usize>) -> Self {
        FormSpec {
            backend: BackendSpec::Spectral { retained },
            resolution,
            rule: QuadratureKind::Midpoint,
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn nugget(resolution: usize, retained: Option<usize>, sigma2: f64) -> Self {
        FormSpec {
            backend: BackendSpec::Nugget { retained, sigma2 },
            resolution,
            rule: QuadratureKind::Midpoint,
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn sum_kernel(resolution: usize, retained: Option<usize>, q: Kernel) -> Self {
        FormSpec {
            backend: BackendSpec::SumKernel { retained, q },
            resolution,
            rule: QuadratureKind::Midpoint,
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn build(&self, kernel: &Kernel, constraint: &ConstraintSet) -> Result<RkhsForm, ConditionError> {
        let quadrature = constraint.quadrature(self.resolution, self.rule)?;
        let form = match &self.backend {
            BackendSpec::Interpolation { nugget } => {
                RkhsForm::interpolation(kernel, quadrature.ambient_nodes, *nugget)?
            }
            BackendSpec::Spectral { retained } => {
                let basis = nystrom_eig(kernel, quadrature, self.truncation)?;
                RkhsForm::spectral(basis, *retained)?
            }
            BackendSpec::Nugget { retained, sigma2 } => {
                let basis = nystrom_eig(kernel, quadrature, self.truncation)?;
                RkhsForm::nugget(basis, *retained, *sigma2)?
            }
            BackendSpec::SumKernel { retained, q } => {
                RkhsForm::sum_kernel(kernel, q, quadrature, self.truncation, *retained)?
            }
        };
        Ok(form)
    }
}

/// The prior conditioned on X|_{T0} = g: mean
/// μ₀(s) = μ(s) + ⟨k_s|_{T0}, (g−μ)|_{T0}⟩ and covariance
/// k₀(s₁,s₂) = k(s₁,s₂) − ⟨k_{s₁}|_{T0}, k_{s₂}|_{T0}⟩, with the inner
/// product supplied by the chosen backend.
pub struct ConstrainedGp {
    prior: Gp,
    constraint: ConstraintSet,
    form: RkhsForm,
    constraint_values: Vec<f64>,
    residual_coeffs: DVector<f64>,
}

/// Condition `prior` on the values of `g` over the constraint set.
pub fn constrain(
    prior: &Gp,
    constraint: &ConstraintSet,
    g: impl Fn(&[f64]) -> f64,
    spec: &FormSpec,
) -> Result<ConstrainedGp, ConditionError> {
    let form = spec.build(&prior.kernel, constraint)?;
    let values: Vec<f64> = form.nodes().iter().map(|p| g(p)).collect();
    ConstrainedGp::with_form(prior, constraint, values, form)
}

impl ConstrainedGp {
    /// Build from a prepared form and constraint values sampled at its nodes.
    /// Callers can reuse one eigendecomposition across several retained
    /// counts this way.
    pub fn with_form(
        prior: &Gp,
        constraint: &ConstraintSet,
        constraint_values: Vec<f64>,
        form: RkhsForm,
    ) -> Result<Self, ConditionError> {
        if constraint.ambient_dimension() != prior.kernel.dimension() {
            return Err(ConditionError::ConstraintDimensionMismatch {
                set: constraint.ambient_dimension(),
                kernel: prior.kernel.dimension(),
            });
        }
        if constraint_values.len() != form.node_count() {
            return Err(ConditionError::ValueCountMismatch {
                points: form.node_count(),
                values: constraint_values.len(),
            });
        }
        check_conflicting_duplicates(form.nodes(), &constraint_values)?;
        let residual: Vec<f64> = form
            .nodes()
            .iter()
            .zip(&constraint_values)
            .map(|(p, v)| v - prior.mean.eval(p))
            .collect();
        let residual_coeffs = form.coeffs(&residual)?;
        Ok(ConstrainedGp {
            prior: prior.clone(),
            constraint: constraint.clone(),
            form,
            constraint_values,
            residual_coeffs,
        })
    }

    pub fn prior(&self) -> &Gp {
        &self.prior
    }

    pub fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    pub fn form(&self) -> &RkhsForm {
        &self.form
    }

    pub fn constraint_values(&self) -> &[f64] {
        &self.constraint_values
    }

    /// μ₀(s), via the cached residual coefficients.
    pub fn mean(&self, s: &[f64]) -> Result<f64, ConditionError> {
        let section = self.form.section_values(s)?;
        let projected = self.form.inner_with_coeffs(&self.residual_coeffs, &section)?;
        Ok(self.prior.mean.eval(s) + projected)
    }

    /// k₀(s₁, s₂).
    pub fn cov(&self, s1: &[f64], s2: &[f64]) -> Result<f64, ConditionError> {
        let k12 = self.prior.kernel.eval(s1, s2)?;
        let a = self.form.section_values(s1)?;
        let b = self.form.section_values(s2)?;
        Ok(k12 - self.form.inner(&a, &b)?)
    }

    /// RKHS-norm proxy a_N(g−μ, g−μ) of the constraint residual.
    pub fn residual_norm_proxy(&self) -> Result<f64, ConditionError> {
        let residual: Vec<f64> = self
            .form
            .nodes()
            .iter()
            .zip(&self.constraint_values)
            .map(|(p, v)| v - self.prior.mean.eval(p))
            .collect();
        Ok(self.form.inner(&residual, &residual)?)
    }

    /// The proxy norm at increasing series lengths. Sustained growth is
    /// evidence that g−μ sits outside H(T0); the projection still behaves
    /// numerically, so this is diagnostic only.
    pub fn residual_norm_profile(&self) -> Result<Vec<(usize, f64)>, ConditionError> {
        let residual: Vec<f64> = self
            .form
            .nodes()
            .iter()
            .zip(&self.constraint_values)
            .map(|(p, v)| v - self.prior.mean.eval(p))
            .collect();
        let Some(basis) = self.form.basis() else {
            let full = self.form.inner(&residual, &residual)?;
            return Ok(vec![(self.form.basis_count(), full)]);
        };
        let rank = self.form.basis_count();
        let mut profile = Vec::new();
        for frac in [0.25, 0.5, 0.75, 1.0] {
            let n = ((rank as f64 * frac).round() as usize).clamp(1, rank);
            if profile.iter().any(|&(m, _)| m == n) {
                continue;
            }
            let partial = RkhsForm::spectral(basis.clone(), Some(n))?;
            profile.push((n, partial.inner(&residual, &residual)?));
        }
        Ok(profile)
    }

    /// True when the proxy norm keeps growing with N (doubles over the
    /// profile), flagging g−μ ∉ H(T0).
    pub fn residual_outside_rkhs(&self) -> Result<bool, ConditionError> {
        let profile = self.residual_norm_profile()?;
        if profile.len() < 2 {
            return Ok(false);
        }
        let first = profile.first().unwrap().1;
        let last = profile.last().unwrap().1;
        let increasing = profile.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-12);
        Ok(increasing && last > 2.0 * first.max(f64::MIN_POSITIVE))
    }
}

impl Surface for ConstrainedGp {
    fn dimension(&self) -> usize {
        self.prior.kernel.dimension()
    }

    fn mean_at(&self, s: &[f64]) -> Result<f64, ConditionError> {
        self.mean(s)
    }

    fn cov_at(&self, s1: &[f64], s2: &[f64]) -> Result<f64, ConditionError> {
        self.cov(s1, s2)
    }
}

/// A base process further conditioned on finitely many direct observations.
pub struct PredictiveGp<B: Surface> {
    base: B,
    obs_points: Vec<Vec<f64>>,
    chol: Option<JitteredCholesky>,
    alpha: DVector<f64>,
    noise_variance: f64,
}

/// Finite conditioning stacked on top of any base surface: the base
/// covariance plays the role of the prior kernel in the classical formulas.
/// Constraint-set behavior of the base is preserved because its covariance
/// vanishes there.
///
/// Observation points should stay off the base's zero-variance set unless
/// `noise_variance > 0`.
pub fn posterior<B: Surface>(
    base: B,
    obs_points: &[Vec<f64>],
    obs_values: &[f64],
    noise_variance: f64,
) -> Result<PredictiveGp<B>, ConditionError> {
    if obs_points.len() != obs_values.len() {
        return Err(ConditionError::ValueCountMismatch {
            points: obs_points.len(),
            values: obs_values.len(),
        });
    }
    if noise_variance < 0.0 {
        return Err(ConditionError::NegativeNoise(noise_variance));
    }
    if obs_points.is_empty() {
        return Ok(PredictiveGp {
            base,
            obs_points: Vec::new(),
            chol: None,
            alpha: DVector::zeros(0),
            noise_variance,
        });
    }
    let m = obs_points.len();
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = base.cov_at(&obs_points[i], &obs_points[j])?;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
        gram[(i, i)] += noise_variance;
    }
    let chol = linalg::cholesky_jittered(&gram, Some(obs_points))?;
    let mut residual = DVector::zeros(m);
    for i in 0..m {
        residual[i] = obs_values[i] - base.mean_at(&obs_points[i])?;
    }
    let alpha = chol.factor.solve(&residual);
    Ok(PredictiveGp {
        base,
        obs_points: obs_points.to_vec(),
        chol: Some(chol),
        alpha,
        noise_variance,
    })
}

impl<B: Surface> PredictiveGp<B> {
    pub fn base(&self) -> &B {
        &self.base
    }

    pub fn observation_count(&self) -> usize {
        self.obs_points.len()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    fn cross_cov(&self, s: &[f64]) -> Result<DVector<f64>, ConditionError> {
        let mut v = DVector::zeros(self.obs_points.len());
        for (i, p) in self.obs_points.iter().enumerate() {
            v[i] = self.base.cov_at(s, p)?;
        }
        Ok(v)
    }
}

impl<B: Surface> Surface for PredictiveGp<B> {
    fn dimension(&self) -> usize {
        self.base.dimension()
    }

    fn mean_at(&self, s: &[f64]) -> Result<f64, ConditionError> {
        if self.obs_points.is_empty() {
            return self.base.mean_at(s);
        }
        Ok(self.base.mean_at(s)? + self.cross_cov(s)?.dot(&self.alpha))
    }

    fn cov_at(&self, s1: &[f64], s2: &[f64]) -> Result<f64, ConditionError> {
        let base_cov = self.base.cov_at(s1, s2)?;
        let Some(chol) = &self.chol else {
            return Ok(base_cov);
        };
        let a = self.cross_cov(s1)?;
        let b = self.cross_cov(s2)?;
        Ok(base_cov - a.dot(&chol.factor.solve(&b)))
    }
}

/// Draw `count` joint samples of the surface on `grid`; row i of the result
/// is one path. Deterministic for a given seed.
pub fn sample_paths<S: Surface>(
    surface: &S,
    grid: &[Vec<f64>],
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>, ConditionError> {
    let g = grid.len();
    if count == 0 {
        return Ok(DMatrix::zeros(0, g));
    }
    let mut mean = DVector::zeros(g);
    for (i, p) in grid.iter().enumerate() {
        mean[i] = surface.mean_at(p)?;
    }
    let mut cov = DMatrix::zeros(g, g);
    for i in 0..g {
        for j in i..g {
            let v = surface.cov_at(&grid[i], &grid[j])?;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let chol = linalg::cholesky_escalating(&cov, 1e-6)?;
    let l = chol.factor.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, g);
    for row in 0..count {
        let z = DVector::from_iterator(g, (0..g).map(|_| StandardNormal.sample(&mut rng)));
        let draw = &mean + &l * z;
        for col in 0..g {
            out[(row, col)] = draw[col];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{self, QuadratureKind};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se(d: usize) -> Kernel {
        Kernel::squared_exponential(d, 1.0).unwrap()
    }

    fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn one_point_conditioning_matches_closed_form() {
        let prior = Gp::new(se(1));
        let fc = finite_condition(&prior, &[vec![0.0]], &[1.0], 0.0).unwrap();
        // mu0(s) = e^{-s^2}, k0(s,s) = 1 - e^{-2 s^2}.
        assert_relative_eq!(fc.mean_at(&[1.0]).unwrap(), (-1.0f64).exp(), epsilon = 1e-9);
        assert_relative_eq!(fc.mean_at(&[1.0]).unwrap(), 0.3678794, epsilon = 1e-6);
        assert_relative_eq!(
            fc.cov_at(&[1.0], &[1.0]).unwrap(),
            1.0 - (-2.0f64).exp(),
            epsilon = 1e-9
        );
        assert_relative_eq!(fc.cov_at(&[1.0], &[1.0]).unwrap(), 0.8646647, epsilon = 1e-6);
    }

    #[test]
    fn conditioning_on_the_mean_changes_nothing() {
        let prior = Gp::with_mean(MeanFn::Constant(0.7), se(1));
        let pts = vec![vec![-0.5], vec![0.2], vec![0.9]];
        let vals = vec![0.7; 3];
        let fc = finite_condition(&prior, &pts, &vals, 0.0).unwrap();
        for s in [-0.9, -0.1, 0.4, 1.0] {
            assert_relative_eq!(fc.mean_at(&[s]).unwrap(), 0.7, epsilon = 1e-9);
        }
    }

    #[test]
    fn factored_solve_matches_explicit_inverse() {
        // Dual-path oracle: assemble Eqs.-style mean/cov from an explicit
        // Gram inverse and compare against the factored implementation.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let prior = Gp::new(se(2));
        let pts = random_points(5, 2, &mut rng);
        let vals: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fc = finite_condition(&prior, &pts, &vals, 0.0).unwrap();

        let mut gram = prior.kernel.gram(&pts, &pts).unwrap();
        let jitter = 1e-10 * (0..5).map(|i| gram[(i, i)]).fold(0.0f64, f64::max);
        for i in 0..5 {
            gram[(i, i)] += jitter;
        }
        let inv = gram.try_inverse().unwrap();
        for _ in 0..20 {
            let s1 = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let s2 = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let a = DVector::from_vec(prior.kernel.section(&s1, &pts).unwrap());
            let b = DVector::from_vec(prior.kernel.section(&s2, &pts).unwrap());
            let x = DVector::from_vec(vals.clone());
            let mean_direct = (a.transpose() * &inv * &x)[(0, 0)];
            let cov_direct =
                prior.kernel.eval(&s1, &s2).unwrap() - (a.transpose() * &inv * &b)[(0, 0)];
            assert_relative_eq!(fc.mean_at(&s1).unwrap(), mean_direct, epsilon = 1e-10);
            assert_relative_eq!(fc.cov_at(&s1, &s2).unwrap(), cov_direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn constrain_on_finite_set_equals_finite_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prior = Gp::new(se(2));
        let pts = random_points(5, 2, &mut rng);
        let target = |p: &[f64]| (p[0] + 2.0 * p[1]).sin();
        let vals: Vec<f64> = pts.iter().map(|p| target(p)).collect();
        let set = domain::finite_points(pts.clone()).unwrap();
        let cgp = constrain(&prior, &set, target, &FormSpec::interpolation(5)).unwrap();
        let fc = finite_condition(&prior, &pts, &vals, 0.0).unwrap();
        for _ in 0..50 {
            let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let t = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert_relative_eq!(
                cgp.mean(&s).unwrap(),
                fc.mean_at(&s).unwrap(),
                epsilon = 1e-10
            );
            assert_relative_eq!(
                cgp.cov(&s, &t).unwrap(),
                fc.cov_at(&s, &t).unwrap(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn constraining_to_the_prior_mean_keeps_it_but_shrinks_variance() {
        let prior = Gp::with_mean(MeanFn::Constant(0.3), se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let cgp = constrain(&prior, &set, |_| 0.3, &FormSpec::interpolation(24)).unwrap();
        for s in [[0.4, -0.2], [-0.8, 0.1], [0.0, 0.9]] {
            assert_relative_eq!(cgp.mean(&s).unwrap(), 0.3, epsilon = 1e-8);
            let k0 = cgp.cov(&s, &s).unwrap();
            let k = prior.kernel.eval(&s, &s).unwrap();
            assert!(k0 < k, "variance must shrink strictly off T0");
        }
    }

    #[test]
    fn spectral_constrain_tracks_dense_finite_conditioning() {
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let target = |p: &[f64]| (p[0] * 1.3).cos();
        let cgp = constrain(&prior, &set, target, &FormSpec::spectral(64, Some(40))).unwrap();
        let q = set.quadrature(64, QuadratureKind::Midpoint).unwrap();
        let vals: Vec<f64> = q.ambient_nodes.iter().map(|p| target(p)).collect();
        let fc = finite_condition(&prior, &q.ambient_nodes, &vals, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert!(
                (cgp.mean(&s).unwrap() - fc.mean_at(&s).unwrap()).abs() < 1e-3,
                "spectral mean drifted from dense conditioning"
            );
            assert!(
                (cgp.cov(&s, &s).unwrap() - fc.cov_at(&s, &s).unwrap()).abs() < 1e-3,
                "spectral variance drifted from dense conditioning"
            );
        }
    }

    #[test]
    fn mean_interpolates_constraint_at_nodes() {
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let target = |p: &[f64]| (p[0] - 0.5 * p[1]).sin();
        let cgp = constrain(&prior, &set, target, &FormSpec::interpolation(32)).unwrap();
        for node in cgp.form().nodes() {
            assert_relative_eq!(cgp.mean(node).unwrap(), target(node), epsilon = 1e-8);
            let k0 = cgp.cov(node, node).unwrap();
            assert!(k0 >= -1e-8 && k0 <= 1e-6, "variance at node was {k0}");
        }
    }

    #[test]
    fn far_field_mean_reverts_to_prior() {
        // Tiny lengthscale: k(s, .) on T0 vanishes away from the nodes.
        let kernel = Kernel::squared_exponential(1, 0.05).unwrap();
        let prior = Gp::with_mean(MeanFn::Constant(-0.4), kernel);
        let set = domain::finite_points(vec![vec![0.0]]).unwrap();
        let cgp = constrain(&prior, &set, |_| 3.0, &FormSpec::interpolation(1)).unwrap();
        assert_relative_eq!(cgp.mean(&[0.9]).unwrap(), -0.4, epsilon = 1e-6);
    }

    #[test]
    fn covariance_vanishes_against_constraint_nodes() {
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let cgp = constrain(&prior, &set, |p| p[0], &FormSpec::interpolation(24)).unwrap();
        let node = cgp.form().nodes()[5].clone();
        for s in [[0.3, -0.7], [0.9, 0.9], [-0.2, 0.4]] {
            assert!(cgp.cov(&node, &s).unwrap().abs() < 1e-6);
        }
    }

    #[test]
    fn posterior_variance_never_exceeds_prior() {
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let cgp = constrain(&prior, &set, |p| p[0], &FormSpec::spectral(32, None)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let k0 = cgp.cov(&s, &s).unwrap();
            let k = prior.kernel.eval(&s, &s).unwrap();
            assert!(k0 <= k + 1e-10);
            assert!(k0 >= -1e-8);
        }
    }

    #[test]
    fn empty_observation_set_is_identity() {
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let cgp = constrain(&prior, &set, |p| p[0], &FormSpec::interpolation(16)).unwrap();
        let post = posterior(cgp, &[], &[], 0.0).unwrap();
        let base = constrain(&prior, &set, |p| p[0], &FormSpec::interpolation(16)).unwrap();
        for s in [[0.4, -0.2], [-0.8, 0.1]] {
            assert_eq!(post.mean_at(&s).unwrap(), base.mean(&s).unwrap());
            assert_eq!(post.cov_at(&s, &s).unwrap(), base.cov(&s, &s).unwrap());
        }
    }

    #[test]
    fn observing_the_current_mean_leaves_it_unchanged() {
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let cgp = constrain(&prior, &set, |p| p[0], &FormSpec::interpolation(16)).unwrap();
        let obs = vec![vec![0.5, -0.5]];
        let val = cgp.mean(&obs[0]).unwrap();
        let post = posterior(cgp, &obs, &[val], 0.0).unwrap();
        let base = constrain(&prior, &set, |p| p[0], &FormSpec::interpolation(16)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert_relative_eq!(
                post.mean_at(&s).unwrap(),
                base.mean(&s).unwrap(),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn posterior_interpolates_noiseless_observations_and_contracts() {
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let cgp = constrain(&prior, &set, |p| p[0], &FormSpec::interpolation(16)).unwrap();
        let obs = vec![vec![0.5, -0.5], vec![-0.3, 0.6]];
        let vals = vec![1.2, -0.4];
        let base = constrain(&prior, &set, |p| p[0], &FormSpec::interpolation(16)).unwrap();
        let post = posterior(cgp, &obs, &vals, 0.0).unwrap();
        for (p, v) in obs.iter().zip(&vals) {
            assert_relative_eq!(post.mean_at(p).unwrap(), *v, epsilon = 1e-6);
            assert!(post.cov_at(p, p).unwrap() < 1e-6);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert!(post.cov_at(&s, &s).unwrap() <= base.cov(&s, &s).unwrap() + 1e-10);
        }
        // Constraint nodes keep their values and zero variance.
        let node = post.base().form().nodes()[3].clone();
        assert_relative_eq!(
            post.mean_at(&node).unwrap(),
            node[0],
            epsilon = 1e-6
        );
        assert!(post.cov_at(&node, &node).unwrap() < 1e-6);
    }

    #[test]
    fn conflicting_duplicate_nodes_are_rejected() {
        let prior = Gp::new(se(1));
        let err = finite_condition(
            &prior,
            &[vec![0.5], vec![0.5]],
            &[1.0, -1.0],
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, ConditionError::InconsistentConstraint { .. }));
    }

    #[test]
    fn nested_node_sets_shrink_variance_monotonically() {
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let q64 = set.quadrature(64, QuadratureKind::Midpoint).unwrap();
        let target = |p: &[f64]| (1.1 * p[0]).sin();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let probes = random_points(20, 2, &mut rng);
        let mut prev: Option<Vec<f64>> = None;
        for n in [8usize, 16, 32, 64] {
            let stride = 64 / n;
            let nodes: Vec<Vec<f64>> = (0..n)
                .map(|i| q64.ambient_nodes[i * stride].clone())
                .collect();
            let vals: Vec<f64> = nodes.iter().map(|p| target(p)).collect();
            let fc = finite_condition(&prior, &nodes, &vals, 0.0).unwrap();
            let vars: Vec<f64> = probes
                .iter()
                .map(|s| fc.cov_at(s, s).unwrap())
                .collect();
            if let Some(prev) = &prev {
                for (v, p) in vars.iter().zip(prev) {
                    assert!(v <= &(p + 1e-10), "variance grew under refinement");
                }
            }
            prev = Some(vars);
        }
    }

    #[test]
    fn sample_paths_zero_count_is_empty() {
        let prior = Gp::new(se(1));
        let out = sample_paths(&prior, &[vec![0.0], vec![0.5]], 0, 1).unwrap();
        assert_eq!(out.nrows(), 0);
        assert_eq!(out.ncols(), 2);
    }

    #[test]
    fn sample_paths_are_deterministic_per_seed() {
        let prior = Gp::new(se(1));
        let grid = vec![vec![-0.5], vec![0.0], vec![0.5]];
        let a = sample_paths(&prior, &grid, 4, 7).unwrap();
        let b = sample_paths(&prior, &grid, 4, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_paths(&prior, &grid, 4, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn samples_on_constraint_nodes_stick_to_g() {
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let target = |p: &[f64]| 0.5 * p[0];
        let cgp = constrain(&prior, &set, target, &FormSpec::interpolation(16)).unwrap();
        let grid: Vec<Vec<f64>> = cgp.form().nodes()[..4].to_vec();
        let draws = sample_paths(&cgp, &grid, 50, 3).unwrap();
        for row in 0..draws.nrows() {
            for (col, point) in grid.iter().enumerate() {
                assert!(
                    (draws[(row, col)] - target(point)).abs() < 1e-3,
                    "draw strayed from the constraint"
                );
            }
        }
    }

    #[test]
    fn monte_carlo_moments_match_analytic_values() {
        let prior = Gp::new(se(1));
        let fc = finite_condition(&prior, &[vec![0.0]], &[1.0], 0.0).unwrap();
        let grid = vec![vec![0.6], vec![0.8]];
        let n = 5000;
        let draws = sample_paths(&fc, &grid, n, 12345).unwrap();
        for (col, point) in grid.iter().enumerate() {
            let mean_hat: f64 = (0..n).map(|r| draws[(r, col)]).sum::<f64>() / n as f64;
            let mean = fc.mean_at(point).unwrap();
            let sd = fc.cov_at(point, point).unwrap().sqrt();
            let stderr = sd / (n as f64).sqrt();
            assert!(
                (mean_hat - mean).abs() < 3.0 * stderr,
                "empirical mean off: {mean_hat} vs {mean}"
            );
        }
        // Empirical covariance between the two grid points within 5 percent.
        let m0: f64 = (0..n).map(|r| draws[(r, 0)]).sum::<f64>() / n as f64;
        let m1: f64 = (0..n).map(|r| draws[(r, 1)]).sum::<f64>() / n as f64;
        let cov_hat: f64 = (0..n)
            .map(|r| (draws[(r, 0)] - m0) * (draws[(r, 1)] - m1))
            .sum::<f64>()
            / (n - 1) as f64;
        let cov = fc.cov_at(&grid[0], &grid[1]).unwrap();
        assert!(
            (cov_hat - cov).abs() < 0.05 * cov.abs(),
            "empirical covariance {cov_hat} vs analytic {cov}"
        );
    }

    #[test]
    fn constrained_mean_is_the_best_predictor_of_conditioned_draws() {
        // Optimality proxy: against draws of the prior conditioned on dense
        // T0 samples, the constrained mean beats the prior mean and ties
        // dense finite conditioning.
        let prior = Gp::new(se(2));
        let set = domain::diagonal([-1.0, -1.0], [1.0, 1.0]).unwrap();
        let target = |p: &[f64]| (0.9 * p[0]).cos();
        let q = set.quadrature(64, QuadratureKind::Midpoint).unwrap();
        let vals: Vec<f64> = q.ambient_nodes.iter().map(|p| target(p)).collect();
        let dense = finite_condition(&prior, &q.ambient_nodes, &vals, 0.0).unwrap();
        let cgp = constrain(&prior, &set, target, &FormSpec::interpolation(64)).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let probes = random_points(10, 2, &mut rng);
        let draws = sample_paths(&dense, &probes, 400, 2024).unwrap();
        let mse = |predict: &dyn Fn(&[f64]) -> f64| -> f64 {
            let mut acc = 0.0;
            for (col, p) in probes.iter().enumerate() {
                let pred = predict(p);
                for row in 0..draws.nrows() {
                    acc += (draws[(row, col)] - pred).powi(2);
                }
            }
            acc / (draws.nrows() * probes.len()) as f64
        };
        let mse_constrained = mse(&|p| cgp.mean(p).unwrap());
        let mse_prior = mse(&|_| 0.0);
        let mse_dense = mse(&|p| dense.mean_at(p).unwrap());
        assert!(mse_constrained <= 1.05 * mse_dense);
        assert!(mse_constrained < mse_prior);
    }

    #[test]
    fn nugget_interpolation_matches_noisy_finite_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let prior = Gp::new(se(2));
        let pts = random_points(10, 2, &mut rng);
        let target = |p: &[f64]| (p[0] - p[1]).sin();
        let vals: Vec<f64> = pts.iter().map(|p| target(p)).collect();
        let sigma2 = 1e-2;
        let fc = finite_condition(&prior, &pts, &vals, sigma2).unwrap();
        let set = domain::finite_points(pts).unwrap();
        let spec = FormSpec {
            backend: BackendSpec::Interpolation { nugget: sigma2 },
            resolution: 10,
            rule: QuadratureKind::Midpoint,
            truncation: DEFAULT_TRUNCATION,
        };
        let cgp = constrain(&prior, &set, target, &spec).unwrap();
        for _ in 0..30 {
            let s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let t = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert_relative_eq!(
                cgp.mean(&s).unwrap(),
                fc.mean_at(&s).unwrap(),
                epsilon = 1e-8
            );
            assert_relative_eq!(
                cgp.cov(&s, &t).unwrap(),
                fc.cov_at(&s, &t).unwrap(),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn residual_norm_diagnostics_flag_rough_targets() {
        let prior = Gp::new(se(2));
        let set = domain::rect_boundary([-1.0, -1.0], [1.0, 1.0]).unwrap();
        // Smooth target: proxy norm levels off.
        let smooth = constrain(
            &prior,
            &set,
            |p| (0.8 * p[0]).sin(),
            &FormSpec::spectral(64, None),
        )
        .unwrap();
        let profile = smooth.residual_norm_profile().unwrap();
        assert!(profile.len() >= 2);
        // A kinked target along the boundary keeps picking up norm with N.
        let kinked = constrain(
            &prior,
            &set,
            |p| p[0].abs() + p[1].abs(),
            &FormSpec::spectral(64, None),
        )
        .unwrap();
        assert!(kinked.residual_norm_proxy().unwrap() > smooth.residual_norm_proxy().unwrap());
    }
}
