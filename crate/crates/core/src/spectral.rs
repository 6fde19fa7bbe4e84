//! Nyström / Ritz–Rayleigh eigendecomposition of the kernel integral
//! operator on T0, and the bilinear forms approximating the RKHS inner
//! product ⟨·,·⟩_{H(T0)} together with its nugget and sum-kernel variants.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::domain::{DomainError, QuadratureRule};
use crate::kernels::{Kernel, KernelError};
use crate::linalg::{self, LinalgError};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error(transparent)]
    Domain(#[from] DomainError),

    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("truncation threshold {0} must lie in [0, 1)")]
    InvalidThreshold(f64),

    #[error("no eigenvalue survived truncation (largest was {largest:.3e})")]
    EmptyBasis { largest: f64 },

    #[error("value vector has {actual} entries, form has {expected} nodes")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("retained eigenvalue count must be at least 1")]
    ZeroRetained,

    #[error(
        "eigenvalue {lambda:.3e} at index {index} is below the machine-safe floor \
         relative to {largest:.3e}; raise the truncation threshold or use a nugget"
    )]
    EigenvalueUnderflow {
        index: usize,
        lambda: f64,
        largest: f64,
    },

    #[error("nugget variance must be nonnegative, got {0}")]
    NegativeNugget(f64),

    #[error("eigenfunction index {index} out of range (basis rank {rank})")]
    EigenIndexOutOfRange { index: usize, rank: usize },
}

/// Truncated eigenpairs {(λₙ, eₙ)} of the kernel integral operator on T0,
/// computed by the Nyström method on a quadrature rule.
///
/// Eigenfunctions are orthonormal in the discrete L²(T0) inner product
/// Σᵢ wᵢ f(xᵢ) g(xᵢ), and at full rank the discrete Mercer identity
/// Σₙ λₙ eₙ(xᵢ) eₙ(xⱼ) = k(xᵢ, xⱼ) holds exactly at the nodes.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    kernel: Kernel,
    quadrature: QuadratureRule,
    eigenvalues: Vec<f64>,
    /// m × r; column n holds eₙ at the quadrature nodes.
    eigenfunctions: DMatrix<f64>,
    truncation_threshold: f64,
}

/// Nyström eigendecomposition: form W^{1/2} G W^{1/2} on the quadrature
/// nodes, eigendecompose, and map eigenvectors back through the weights,
/// eₙ(xᵢ) = vₙ(i)/√wᵢ. Eigenpairs with λₙ < threshold·λ₁ (or λₙ ≤ 0) are
/// discarded.
pub fn nystrom_eig(
    kernel: &Kernel,
    quadrature: QuadratureRule,
    truncation_threshold: f64,
) -> Result<SpectralBasis, SpectralError> {
    if !(0.0..1.0).contains(&truncation_threshold) {
        return Err(SpectralError::InvalidThreshold(truncation_threshold));
    }
    let m = quadrature.len();
    let gram = kernel.gram(&quadrature.ambient_nodes, &quadrature.ambient_nodes)?;
    let sqrt_w: Vec<f64> = quadrature.weights.iter().map(|w| w.sqrt()).collect();
    let mut b = gram;
    for i in 0..m {
        for j in 0..m {
            b[(i, j)] *= sqrt_w[i] * sqrt_w[j];
        }
    }
    let (values, vectors) = linalg::symmetric_eig_desc(&b)?;
    let largest = values.first().copied().unwrap_or(0.0);
    if largest <= 0.0 {
        return Err(SpectralError::EmptyBasis { largest });
    }
    let floor = truncation_threshold * largest;
    let rank = values
        .iter()
        .take_while(|&&v| v > 0.0 && v >= floor)
        .count();
    if rank == 0 {
        return Err(SpectralError::EmptyBasis { largest });
    }
    let mut eigenfunctions = DMatrix::zeros(m, rank);
    for n in 0..rank {
        for i in 0..m {
            eigenfunctions[(i, n)] = vectors[(i, n)] / sqrt_w[i];
        }
    }
    Ok(SpectralBasis {
        kernel: kernel.clone(),
        quadrature,
        eigenvalues: values[..rank].to_vec(),
        eigenfunctions,
        truncation_threshold,
    })
}

impl SpectralBasis {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    /// Retained eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn node_count(&self) -> usize {
        self.quadrature.len()
    }

    pub fn truncation_threshold(&self) -> f64 {
        self.truncation_threshold
    }

    /// eₙ evaluated at node i.
    pub fn eigenfunction_value(&self, n: usize, i: usize) -> f64 {
        self.eigenfunctions[(i, n)]
    }

    /// Nyström extension eₙ(s) = (1/λₙ) Σᵢ wᵢ k(s, xᵢ) eₙ(xᵢ) for points off
    /// the node set. Diagnostic only; conditioning never needs it.
    pub fn nystrom_extension(&self, n: usize, s: &[f64]) -> Result<f64, SpectralError> {
        if n >= self.rank() {
            return Err(SpectralError::EigenIndexOutOfRange {
                index: n,
                rank: self.rank(),
            });
        }
        let mut acc = 0.0;
        for i in 0..self.node_count() {
            acc += self.quadrature.weights[i]
                * self.kernel.eval(s, &self.quadrature.ambient_nodes[i])?
                * self.eigenfunctions[(i, n)];
        }
        Ok(acc / self.eigenvalues[n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Interpolation,
    Spectral,
    Nugget,
    SumKernel,
}

impl BackendKind {
    pub fn label(self) -> &'static str {
        match self {
            BackendKind::Interpolation => "interpolation",
            BackendKind::Spectral => "spectral",
            BackendKind::Nugget => "nugget",
            BackendKind::SumKernel => "sum_kernel",
        }
    }
}

enum FormData {
    Interpolation {
        nodes: Vec<Vec<f64>>,
        chol: linalg::JitteredCholesky,
        nugget: f64,
    },
    /// Series backend Σₙ ⟨f,eₙ⟩⟨g,eₙ⟩ / (λₙ + shift); shift = 0 is the plain
    /// spectral form, shift = σ² the §-style operator nugget, and a basis
    /// built from k+q with k kept as the section kernel gives the sum form.
    Series {
        basis: SpectralBasis,
        retained: usize,
        shift: f64,
        /// retained × m map from node values to series coefficients,
        /// row n holding wᵢ eₙ(xᵢ).
        pairing: DMatrix<f64>,
    },
}

/// A bilinear form approximating ⟨·,·⟩_{H(T0)} on function values given at a
/// fixed node set.
pub struct RkhsForm {
    /// Kernel whose sections k_s are paired by the conditioning formulas.
    kernel: Kernel,
    kind: BackendKind,
    data: FormData,
}

fn series_pairing(basis: &SpectralBasis, retained: usize) -> DMatrix<f64> {
    let m = basis.node_count();
    let mut pairing = DMatrix::zeros(retained, m);
    for n in 0..retained {
        for i in 0..m {
            pairing[(n, i)] = basis.quadrature.weights[i] * basis.eigenfunctions[(i, n)];
        }
    }
    pairing
}

impl RkhsForm {
    /// Finite-node projection form f(𝐭)ᵀ (k(𝐭,𝐭) + nugget·I + jitter)⁻¹ g(𝐭).
    pub fn interpolation(
        kernel: &Kernel,
        nodes: Vec<Vec<f64>>,
        nugget: f64,
    ) -> Result<Self, SpectralError> {
        if nugget < 0.0 {
            return Err(SpectralError::NegativeNugget(nugget));
        }
        let mut gram = kernel.gram(&nodes, &nodes)?;
        for i in 0..gram.nrows() {
            gram[(i, i)] += nugget;
        }
        let chol = linalg::cholesky_jittered(&gram, Some(&nodes))?;
        Ok(RkhsForm {
            kernel: kernel.clone(),
            kind: BackendKind::Interpolation,
            data: FormData::Interpolation {
                nodes,
                chol,
                nugget,
            },
        })
    }

    /// Truncated series form a_N(f, g) = Σₙ≤N ⟨f,eₙ⟩⟨g,eₙ⟩/λₙ.
    ///
    /// `retained = None` keeps every eigenpair of the basis; an explicit
    /// count above the basis rank is clamped to it.
    pub fn spectral(basis: SpectralBasis, retained: Option<usize>) -> Result<Self, SpectralError> {
        Self::series(basis, retained, 0.0, BackendKind::Spectral)
    }

    /// Series form with operator-shifted eigenvalues λₙ + σ².
    pub fn nugget(
        basis: SpectralBasis,
        retained: Option<usize>,
        sigma2: f64,
    ) -> Result<Self, SpectralError> {
        if sigma2 < 0.0 {
            return Err(SpectralError::NegativeNugget(sigma2));
        }
        Self::series(basis, retained, sigma2, BackendKind::Nugget)
    }

    /// Series form under the k+q geometry: the basis is eigendecomposed from
    /// the sum kernel while sections are still taken from `section_kernel`.
    pub fn sum_kernel(
        section_kernel: &Kernel,
        q: &Kernel,
        quadrature: QuadratureRule,
        truncation_threshold: f64,
        retained: Option<usize>,
    ) -> Result<Self, SpectralError> {
        let sum = Kernel::sum(section_kernel.clone(), q.clone())?;
        let basis = nystrom_eig(&sum, quadrature, truncation_threshold)?;
        let mut form = Self::series(basis, retained, 0.0, BackendKind::SumKernel)?;
        form.kernel = section_kernel.clone();
        Ok(form)
    }

    fn series(
        basis: SpectralBasis,
        retained: Option<usize>,
        shift: f64,
        kind: BackendKind,
    ) -> Result<Self, SpectralError> {
        let retained = match retained {
            Some(0) => return Err(SpectralError::ZeroRetained),
            Some(n) => n.min(basis.rank()),
            None => basis.rank(),
        };
        if shift == 0.0 {
            let largest = basis.eigenvalues[0];
            let smallest = basis.eigenvalues[retained - 1];
            if smallest < largest * f64::EPSILON {
                return Err(SpectralError::EigenvalueUnderflow {
                    index: retained - 1,
                    lambda: smallest,
                    largest,
                });
            }
        }
        let pairing = series_pairing(&basis, retained);
        let kernel = basis.kernel.clone();
        Ok(RkhsForm {
            kernel,
            kind,
            data: FormData::Series {
                basis,
                retained,
                shift,
                pairing,
            },
        })
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        match &self.data {
            FormData::Interpolation { nodes, .. } => nodes,
            FormData::Series { basis, .. } => &basis.quadrature.ambient_nodes,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes().len()
    }

    /// Retained series length, or the node count for the interpolation form.
    pub fn basis_count(&self) -> usize {
        match &self.data {
            FormData::Interpolation { nodes, .. } => nodes.len(),
            FormData::Series { retained, .. } => *retained,
        }
    }

    pub fn basis(&self) -> Option<&SpectralBasis> {
        match &self.data {
            FormData::Interpolation { .. } => None,
            FormData::Series { basis, .. } => Some(basis),
        }
    }

    /// Kernel-section values k(s, xᵢ) at the form's nodes.
    pub fn section_values(&self, s: &[f64]) -> Result<Vec<f64>, SpectralError> {
        Ok(self.kernel.section(s, self.nodes())?)
    }

    fn check_len(&self, values: &[f64]) -> Result<(), SpectralError> {
        if values.len() != self.node_count() {
            return Err(SpectralError::LengthMismatch {
                expected: self.node_count(),
                actual: values.len(),
            });
        }
        Ok(())
    }

    /// The bilinear form ⟨f, g⟩ on node-value vectors.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> Result<f64, SpectralError> {
        self.check_len(f)?;
        self.check_len(g)?;
        match &self.data {
            FormData::Interpolation { chol, .. } => {
                let solved = chol.factor.solve(&DVector::from_column_slice(g));
                Ok(DVector::from_column_slice(f).dot(&solved))
            }
            FormData::Series {
                basis,
                retained,
                shift,
                pairing,
            } => {
                let cf = pairing * DVector::from_column_slice(f);
                let cg = pairing * DVector::from_column_slice(g);
                let mut acc = 0.0;
                for n in 0..*retained {
                    acc += cf[n] * cg[n] / (basis.eigenvalues[n] + shift);
                }
                Ok(acc)
            }
        }
    }

    /// Value-space coefficients c with ⟨f, g⟩ = Σᵢ cᵢ g(xᵢ) for every g.
    /// Precomputing c makes repeated inner products against a fixed f one
    /// dot product each.
    pub fn coeffs(&self, f: &[f64]) -> Result<DVector<f64>, SpectralError> {
        self.check_len(f)?;
        match &self.data {
            FormData::Interpolation { chol, .. } => {
                Ok(chol.factor.solve(&DVector::from_column_slice(f)))
            }
            FormData::Series {
                basis,
                retained,
                shift,
                pairing,
            } => {
                let mut cf = pairing * DVector::from_column_slice(f);
                for n in 0..*retained {
                    cf[n] /= basis.eigenvalues[n] + shift;
                }
                Ok(pairing.transpose() * cf)
            }
        }
    }

    /// ⟨f, g⟩ evaluated from coefficients previously returned by [`coeffs`].
    ///
    /// [`coeffs`]: RkhsForm::coeffs
    pub fn inner_with_coeffs(&self, coeffs: &DVector<f64>, g: &[f64]) -> Result<f64, SpectralError> {
        self.check_len(g)?;
        Ok(coeffs.dot(&DVector::from_column_slice(g)))
    }
}

/// Free-function alias for [`RkhsForm::inner`].
pub fn rkhs_inner(form: &RkhsForm, f: &[f64], g: &[f64]) -> Result<f64, SpectralError> {
    form.inner(f, g)
}

/// Free-function alias for [`RkhsForm::coeffs`].
pub fn inner_coeffs(form: &RkhsForm, f: &[f64]) -> Result<DVector<f64>, SpectralError> {
    form.coeffs(f)
}
