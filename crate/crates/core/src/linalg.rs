//! Shared dense linear-algebra helpers: jittered Cholesky factorization and
//! a descending-sorted symmetric eigendecomposition.

use nalgebra::{Cholesky, DMatrix, Dyn};
use thiserror::Error;

/// Relative jitter added to Gram diagonals before factorization.
pub const GRAM_JITTER_REL: f64 = 1e-10;

/// Absolute jitter floor so all-zero covariance matrices stay factorizable.
pub const JITTER_ABS_FLOOR: f64 = 1e-18;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error(
        "matrix not positive definite after jitter {jitter:.3e}; \
         nearest rows {i} and {j} are {distance:.3e} apart"
    )]
    NotPositiveDefinite {
        jitter: f64,
        i: usize,
        j: usize,
        distance: f64,
    },

    #[error("symmetric eigendecomposition failed to converge (n = {n}, max |entry| = {max_abs:.3e})")]
    EigenFailure { n: usize, max_abs: f64 },
}

pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

fn max_diag(mat: &DMatrix<f64>) -> f64 {
    (0..mat.nrows()).map(|i| mat[(i, i)]).fold(0.0f64, f64::max)
}

fn jitter_for(mat: &DMatrix<f64>) -> f64 {
    (GRAM_JITTER_REL * max_diag(mat)).max(JITTER_ABS_FLOOR)
}

fn attempt(mat: &DMatrix<f64>, jitter: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut m = mat.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += jitter;
    }
    m.cholesky()
}

fn nearest_pair(points: Option<&[Vec<f64>]>, n: usize) -> (usize, usize, f64) {
    let Some(points) = points else {
        return (0, 0, f64::NAN);
    };
    let mut best = (0usize, 0usize, f64::INFINITY);
    for i in 0..n.min(points.len()) {
        for j in (i + 1)..n.min(points.len()) {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    best
}

/// Factor `mat + jitter·I` with the standard relative jitter. `points`, when
/// given, are the locations behind the Gram rows, used to name the nearest
/// pair in the failure diagnostic.
pub fn cholesky_jittered(
    mat: &DMatrix<f64>,
    points: Option<&[Vec<f64>]>,
) -> Result<JitteredCholesky, LinalgError> {
    let jitter = jitter_for(mat);
    match attempt(mat, jitter) {
        Some(factor) => Ok(JitteredCholesky { factor, jitter }),
        None => {
            let (i, j, distance) = nearest_pair(points, mat.nrows());
            Err(LinalgError::NotPositiveDefinite {
                jitter,
                i,
                j,
                distance,
            })
        }
    }
}

/// Like [`cholesky_jittered`] but escalating the jitter by decades up to
/// `max_rel` (relative to the max diagonal). Used for sampling covariances.
pub fn cholesky_escalating(
    mat: &DMatrix<f64>,
    max_rel: f64,
) -> Result<JitteredCholesky, LinalgError> {
    let scale = max_diag(mat).max(JITTER_ABS_FLOOR);
    let mut jitter = jitter_for(mat);
    loop {
        if let Some(factor) = attempt(mat, jitter) {
            return Ok(JitteredCholesky { factor, jitter });
        }
        jitter *= 10.0;
        if jitter > max_rel * scale {
            let (i, j, distance) = nearest_pair(None, mat.nrows());
            return Err(LinalgError::NotPositiveDefinite {
                jitter,
                i,
                j,
                distance,
            });
        }
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and eigenvectors as matching columns.
pub fn symmetric_eig_desc(mat: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), LinalgError> {
    let n = mat.nrows();
    let se = mat
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| LinalgError::EigenFailure {
            n,
            max_abs: mat.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[j].partial_cmp(&se.eigenvalues[i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(mat: &DMatrix<f64>) -> f64 {
    mat.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
