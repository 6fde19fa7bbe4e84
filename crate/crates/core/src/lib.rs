//! Gaussian processes conditioned on function values over uncountable
//! subsets of the domain — boundaries, diagonals, arbitrary parameterized
//! curves — via RKHS orthogonal projections.
//!
//! The conditional mean and covariance are
//!
//! ```text
//! μ₀(s)      = μ(s)      + ⟨k_s|_{T0}, (g−μ)|_{T0}⟩_{H(T0)}
//! k₀(s₁,s₂) = k(s₁,s₂) − ⟨k_{s₁}|_{T0}, k_{s₂}|_{T0}⟩_{H(T0)}
//! ```
//!
//! with the RKHS inner product on T0 realized by interchangeable backends:
//! a Gram-inverse projection on conditioning nodes, a truncated Nyström
//! eigen-series, the operator-nugget variant for noisy constraints, and a
//! sum-kernel variant for correlated constraint noise.
//!
//! The `gpb` binary drives the experiment harness; see the crate README.

pub mod cli;
pub mod conditioning;
pub mod domain;
pub mod kernels;
pub mod linalg;
pub mod spectral;
pub mod verify;

pub use conditioning::{
    constrain, finite_condition, posterior, sample_paths, BackendSpec, ConditionError,
    ConstrainedGp, FiniteConditioned, FormSpec, Gp, MeanFn, PredictiveGp, Surface,
};
pub use domain::{
    diagonal, finite_points, latin_hypercube, rect_boundary, segment, ConstraintSet,
    ConstraintSpec, QuadratureKind, QuadratureRule,
};
pub use kernels::{scale_variance, Kernel, KernelError, MaternSmoothness, ScaleFn};
pub use spectral::{inner_coeffs, nystrom_eig, rkhs_inner, BackendKind, RkhsForm, SpectralBasis};
pub use verify::{interpolant_build, psd_probe, reproduce_check, InterpolantBasis, ReproducingReport};
