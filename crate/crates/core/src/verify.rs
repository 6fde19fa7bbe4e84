//! Reproducing-property verification: how closely a bilinear-form backend
//! realizes ⟨f, k_t⟩ = f(t), plus interpolant builders and PSD probes used
//! by the experiment harness.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernels::{Kernel, KernelError};
use crate::linalg::{self, LinalgError};
use crate::spectral::{RkhsForm, SpectralError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error(transparent)]
    Spectral(#[from] SpectralError),

    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("interpolation needs at least one point")]
    NoPoints,

    #[error("interpolation abscissae must be distinct (points {i} and {j} coincide)")]
    DuplicateAbscissae { i: usize, j: usize },

    #[error("kernel interpolation expects a one-dimensional kernel, got dimension {0}")]
    NotOneDimensional(usize),
}

/// Per-backend reproduction errors |⟨f, k_t⟩ − f(t)| over a test grid.
#[derive(Debug, Clone)]
pub struct ReproducingReport {
    pub backend: String,
    pub basis_count: usize,
    pub per_point_errors: Vec<f64>,
    pub max_error: f64,
}

/// Measure how well `form` reproduces `f` through the kernel sections:
/// error(t) = |⟨f|_nodes, k_t|_nodes⟩ − f(t)|.
pub fn reproduce_check(
    form: &RkhsForm,
    f: impl Fn(&[f64]) -> f64,
    test_points: &[Vec<f64>],
) -> Result<ReproducingReport, VerifyError> {
    let f_nodes: Vec<f64> = form.nodes().iter().map(|p| f(p)).collect();
    let coeffs = form.coeffs(&f_nodes)?;
    let mut per_point_errors = Vec::with_capacity(test_points.len());
    for t in test_points {
        let section = form.section_values(t)?;
        let reproduced = form.inner_with_coeffs(&coeffs, &section)?;
        per_point_errors.push((reproduced - f(t)).abs());
    }
    let max_error = per_point_errors.iter().cloned().fold(0.0f64, f64::max);
    Ok(ReproducingReport {
        backend: form.kind().label().to_string(),
        basis_count: form.basis_count(),
        per_point_errors,
        max_error,
    })
}

/// Interpolation basis for [`interpolant_build`].
pub enum InterpolantBasis {
    /// Kernel sections k(·, xⱼ); the interpolant lies in H(T).
    KernelSections(Kernel),
    /// Degree J−1 polynomial through all points (barycentric Lagrange);
    /// generally not an element of H(T).
    Polynomial,
}

/// A one-dimensional interpolant of (x, y) pairs.
#[derive(Debug, Clone)]
pub enum Interpolant {
    KernelSections {
        kernel: Kernel,
        abscissae: Vec<f64>,
        coefficients: Vec<f64>,
    },
    Polynomial {
        abscissae: Vec<f64>,
        ordinates: Vec<f64>,
        bary_weights: Vec<f64>,
    },
}

impl Interpolant {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Interpolant::KernelSections {
                kernel,
                abscissae,
                coefficients,
            } => abscissae
                .iter()
                .zip(coefficients)
                .map(|(xj, a)| a * kernel.eval_unchecked(&[x], &[*xj]))
                .sum(),
            Interpolant::Polynomial {
                abscissae,
                ordinates,
                bary_weights,
            } => {
                // Barycentric second form; exact at the abscissae.
                let mut num = 0.0;
                let mut den = 0.0;
                for ((xj, yj), w) in abscissae.iter().zip(ordinates).zip(bary_weights) {
                    let dx = x - xj;
                    if dx == 0.0 {
                        return *yj;
                    }
                    let t = w / dx;
                    num += t * yj;
                    den += t;
                }
                num / den
            }
        }
    }
}

/// Build an interpolant of the given points in the chosen basis.
pub fn interpolant_build(
    points: &[(f64, f64)],
    basis: InterpolantBasis,
) -> Result<Interpolant, VerifyError> {
    if points.is_empty() {
        return Err(VerifyError::NoPoints);
    }
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if points[i].0 == points[j].0 {
                return Err(VerifyError::DuplicateAbscissae { i, j });
            }
        }
    }
    let abscissae: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ordinates: Vec<f64> = points.iter().map(|p| p.1).collect();
    match basis {
        InterpolantBasis::KernelSections(kernel) => {
            if kernel.dimension() != 1 {
                return Err(VerifyError::NotOneDimensional(kernel.dimension()));
            }
            let nodes: Vec<Vec<f64>> = abscissae.iter().map(|&x| vec![x]).collect();
            let gram = kernel.gram(&nodes, &nodes)?;
            let chol = linalg::cholesky_jittered(&gram, Some(&nodes))?;
            let coefficients = chol.factor.solve(&DVector::from_vec(ordinates));
            Ok(Interpolant::KernelSections {
                kernel,
                abscissae,
                coefficients: coefficients.iter().cloned().collect(),
            })
        }
        InterpolantBasis::Polynomial => {
            let n = abscissae.len();
            let mut bary_weights = vec![0.0; n];
            for j in 0..n {
                let mut w = 1.0;
                for i in 0..n {
                    if i != j {
                        w *= abscissae[j] - abscissae[i];
                    }
                }
                bary_weights[j] = 1.0 / w;
            }
            Ok(Interpolant::Polynomial {
                abscissae,
                ordinates,
                bary_weights,
            })
        }
    }
}

/// Minimum eigenvalue of the Gram matrix of `cov` on `points`. A symmetric
/// eigensolve always returns, so this never fails.
pub fn psd_probe(cov: impl Fn(&[f64], &[f64]) -> f64, points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = cov(&points[i], &points[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    linalg::min_eigenvalue(&gram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{finite_condition, Gp, Surface};
    use crate::domain;
    use crate::spectral::nystrom_eig;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se1() -> Kernel {
        Kernel::squared_exponential(1, 1.0).unwrap()
    }

    fn grid(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| vec![-1.0 + 2.0 * i as f64 / (n - 1) as f64])
            .collect()
    }

    #[test]
    fn node_sections_reproduce_exactly_under_interpolation() {
        let nodes = grid(8);
        let kernel = se1();
        let form = RkhsForm::interpolation(&kernel, nodes.clone(), 0.0).unwrap();
        let star = nodes[3].clone();
        let f = move |p: &[f64]| kernel.eval(p, &star).unwrap();
        let report = reproduce_check(&form, f, &nodes).unwrap();
        assert!(report.max_error <= 1e-8, "max error {}", report.max_error);
    }

    #[test]
    fn zero_function_reproduces_with_zero_error() {
        let form = RkhsForm::interpolation(&se1(), grid(6), 0.0).unwrap();
        let report = reproduce_check(&form, |_| 0.0, &grid(40)).unwrap();
        assert!(report.per_point_errors.iter().all(|&e| e == 0.0));
        assert_eq!(report.max_error, 0.0);
    }

    #[test]
    fn report_max_is_max_of_per_point_errors() {
        let form = RkhsForm::interpolation(&se1(), grid(5), 0.0).unwrap();
        let report = reproduce_check(&form, |p| p[0] * p[0], &grid(50)).unwrap();
        let expect = report
            .per_point_errors
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        assert_eq!(report.max_error, expect);
    }

    #[test]
    fn single_section_interpolant_closed_form() {
        let f = interpolant_build(&[(0.0, 1.0)], InterpolantBasis::KernelSections(se1())).unwrap();
        assert_relative_eq!(f.eval(0.5), (-0.25f64).exp(), epsilon = 1e-9);
        assert_relative_eq!(f.eval(0.5), 0.7788008, epsilon = 1e-6);
    }

    #[test]
    fn two_point_polynomial_is_the_line() {
        let f =
            interpolant_build(&[(-1.0, -1.0), (1.0, 1.0)], InterpolantBasis::Polynomial).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert_relative_eq!(f.eval(x), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn interpolants_hit_their_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<(f64, f64)> = (0..6)
            .map(|j| (-1.0 + 2.0 * j as f64 / 5.0, rng.random_range(-1.0..1.0)))
            .collect();
        let fk = interpolant_build(&points, InterpolantBasis::KernelSections(se1())).unwrap();
        let fp = interpolant_build(&points, InterpolantBasis::Polynomial).unwrap();
        for (x, y) in &points {
            assert_relative_eq!(fk.eval(*x), *y, epsilon = 1e-8);
            assert_relative_eq!(fp.eval(*x), *y, epsilon = 1e-8);
        }
    }

    #[test]
    fn kernel_and_polynomial_interpolants_stay_close() {
        // Same six points, both bases: the two functions are near-identical
        // even though only the kernel one lives in H(T).
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<(f64, f64)> = (0..6)
            .map(|j| (-1.0 + 2.0 * j as f64 / 5.0, rng.random_range(-1.0..1.0)))
            .collect();
        let fk = interpolant_build(&points, InterpolantBasis::KernelSections(se1())).unwrap();
        let fp = interpolant_build(&points, InterpolantBasis::Polynomial).unwrap();
        let mut max_f1 = 0.0f64;
        let mut max_gap = 0.0f64;
        for i in 0..200 {
            let x = -1.0 + 2.0 * i as f64 / 199.0;
            max_f1 = max_f1.max(fk.eval(x).abs());
            max_gap = max_gap.max((fk.eval(x) - fp.eval(x)).abs());
        }
        assert!(
            max_gap <= 0.1 * max_f1,
            "gap {max_gap} vs scale {max_f1}"
        );
    }

    #[test]
    fn duplicate_abscissae_are_rejected() {
        let err = interpolant_build(
            &[(0.0, 1.0), (0.0, 2.0)],
            InterpolantBasis::Polynomial,
        )
        .unwrap_err();
        assert!(matches!(err, VerifyError::DuplicateAbscissae { .. }));
    }

    #[test]
    fn psd_probe_on_prior_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let kernel = se1();
        let pts: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let min = psd_probe(|a, b| kernel.eval(a, b).unwrap(), &pts);
        assert!(min >= -1e-10);
    }

    #[test]
    fn psd_probe_on_conditioned_covariance_vanishes_at_the_point() {
        let prior = Gp::new(se1());
        let fc = finite_condition(&prior, &[vec![0.0]], &[0.5], 0.0).unwrap();
        let mut pts = vec![vec![0.0]];
        pts.extend((1..8).map(|i| vec![-1.0 + 0.25 * i as f64]));
        let min = psd_probe(|a, b| fc.cov_at(a, b).unwrap(), &pts);
        assert!(min >= -1e-10);
        assert!(fc.cov_at(&pts[0], &pts[3]).unwrap().abs() < 1e-9);
    }

    #[test]
    fn coarser_conditioning_dominates_finer_as_a_kernel() {
        // k0 at N nodes minus k0 at 2N nested nodes stays a positive kernel.
        let prior = Gp::new(se1());
        let all: Vec<Vec<f64>> = (0..16).map(|i| vec![-1.0 + (2.0 / 16.0) * (i as f64 + 0.5)]).collect();
        let coarse: Vec<Vec<f64>> = all.iter().step_by(2).cloned().collect();
        let vals_c: Vec<f64> = coarse.iter().map(|p| p[0].sin()).collect();
        let vals_f: Vec<f64> = all.iter().map(|p| p[0].sin()).collect();
        let fc_coarse = finite_condition(&prior, &coarse, &vals_c, 0.0).unwrap();
        let fc_fine = finite_condition(&prior, &all, &vals_f, 0.0).unwrap();
        let probes = grid(10);
        let min = psd_probe(
            |a, b| fc_coarse.cov_at(a, b).unwrap() - fc_fine.cov_at(a, b).unwrap(),
            &probes,
        );
        assert!(min >= -1e-8, "difference kernel min eigenvalue {min}");
    }

    #[test]
    fn spectral_reproduction_error_drops_with_basis_size() {
        // f1 in the span of six kernel sections: more retained eigenpairs
        // cannot make reproduction worse.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let points: Vec<(f64, f64)> = (0..6)
            .map(|j| (-1.0 + 2.0 * j as f64 / 5.0, rng.random_range(-1.0..1.0)))
            .collect();
        let f1 = interpolant_build(&points, InterpolantBasis::KernelSections(se1())).unwrap();
        let seg = domain::segment(vec![-1.0], vec![1.0]).unwrap();
        let quad = seg
            .quadrature(64, crate::domain::QuadratureKind::Midpoint)
            .unwrap();
        let basis = nystrom_eig(&se1(), quad, 1e-12).unwrap();
        let test = grid(200);
        let error_at = |n: usize| {
            let form = RkhsForm::spectral(basis.clone(), Some(n)).unwrap();
            reproduce_check(&form, |p| f1.eval(p[0]), &test)
                .unwrap()
                .max_error
        };
        let e10 = error_at(10);
        let e40 = error_at(40);
        assert!(
            e40 <= e10,
            "reproduction error rose with basis size: {e10} -> {e40}"
        );
    }
}
