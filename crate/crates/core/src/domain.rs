//! The ambient domain T, constraint sets T0 (finite collections and
//! parameterized one-dimensional paths), quadrature rules carrying the
//! induced L²(T0) measure, and experiment point designs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("degenerate rectangle: lo must be strictly below hi componentwise")]
    DegenerateRectangle,

    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,

    #[error("quadrature needs at least one node")]
    EmptyQuadrature,

    #[error("finite constraint set needs at least one point")]
    EmptyPointSet,

    #[error("points have inconsistent dimensions")]
    InconsistentPointDimensions,

    #[error("parameter {param} outside the path interval [{start}, {end})")]
    ParameterOutOfRange { param: f64, start: f64, end: f64 },

    #[error("sample count must be at least 1")]
    EmptyDesign,

    #[error("constraint set has no parameterization")]
    NotAPath,
}

/// One affine piece of a parameterized path: the map sends
/// `[param_start, param_end)` linearly onto the chord from `start` to `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub param_start: f64,
    pub param_end: f64,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl PathSegment {
    pub fn length(&self) -> f64 {
        self.start
            .iter()
            .zip(&self.end)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Arclength per unit of parameter.
    pub fn speed(&self) -> f64 {
        self.length() / (self.param_end - self.param_start)
    }

    pub fn embed(&self, param: f64) -> Vec<f64> {
        let u = (param - self.param_start) / (self.param_end - self.param_start);
        self.start
            .iter()
            .zip(&self.end)
            .map(|(a, b)| a + u * (b - a))
            .collect()
    }
}

/// The subset T0 ⊂ T on which process values are fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    FinitePoints {
        points: Vec<Vec<f64>>,
        ambient_dimension: usize,
    },
    /// Injective piecewise-affine map ℓ : [param_start, param_end) → ℝᵈ.
    /// Segments partition the interval with parameter length proportional to
    /// arclength, so the map is unit-speed up to one global constant.
    ParameterizedPath {
        segments: Vec<PathSegment>,
        param_start: f64,
        param_end: f64,
        ambient_dimension: usize,
    },
}

/// Quadrature rule discretizing ∫_{T0} under the arclength measure.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    /// Parameter values for paths; copies of the points for finite sets.
    pub params: Vec<f64>,
    pub weights: Vec<f64>,
    pub ambient_nodes: Vec<Vec<f64>>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.ambient_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ambient_nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Discrete L²(T0) pairing Σᵢ wᵢ f(xᵢ) g(xᵢ).
    pub fn pair(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureKind {
    Midpoint,
    GaussLegendre,
}

/// Counterclockwise boundary of the rectangle [lo₁,hi₁]×[lo₂,hi₂],
/// parameterized over [−1, 1) starting at the corner (lo₁, lo₂).
pub fn rect_boundary(lo: [f64; 2], hi: [f64; 2]) -> Result<ConstraintSet, DomainError> {
    if !(lo[0] < hi[0] && lo[1] < hi[1]) {
        return Err(DomainError::DegenerateRectangle);
    }
    let corners = [
        vec![lo[0], lo[1]],
        vec![hi[0], lo[1]],
        vec![hi[0], hi[1]],
        vec![lo[0], hi[1]],
    ];
    let lengths: Vec<f64> = (0..4)
        .map(|i| {
            let a = &corners[i];
            let b = &corners[(i + 1) % 4];
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        })
        .collect();
    let perimeter: f64 = lengths.iter().sum();
    let mut segments = Vec::with_capacity(4);
    let mut t = -1.0;
    for i in 0..4 {
        let dt = 2.0 * lengths[i] / perimeter;
        let t_end = if i == 3 { 1.0 } else { t + dt };
        segments.push(PathSegment {
            param_start: t,
            param_end: t_end,
            start: corners[i].clone(),
            end: corners[(i + 1) % 4].clone(),
        });
        t = t_end;
    }
    Ok(ConstraintSet::ParameterizedPath {
        segments,
        param_start: -1.0,
        param_end: 1.0,
        ambient_dimension: 2,
    })
}

/// The diagonal of the rectangle, lo → hi, parameterized over [−1, 1).
/// For the unit box this is t ↦ (t, t).
pub fn diagonal(lo: [f64; 2], hi: [f64; 2]) -> Result<ConstraintSet, DomainError> {
    if !(lo[0] < hi[0] && lo[1] < hi[1]) {
        return Err(DomainError::DegenerateRectangle);
    }
    segment(lo.to_vec(), hi.to_vec())
}

/// Single straight segment between two points, parameterized over [−1, 1).
pub fn segment(start: Vec<f64>, end: Vec<f64>) -> Result<ConstraintSet, DomainError> {
    if start.len() != end.len() || start.is_empty() {
        return Err(DomainError::InconsistentPointDimensions);
    }
    if start == end {
        return Err(DomainError::DegenerateSegment);
    }
    let d = start.len();
    Ok(ConstraintSet::ParameterizedPath {
        segments: vec![PathSegment {
            param_start: -1.0,
            param_end: 1.0,
            start,
            end,
        }],
        param_start: -1.0,
        param_end: 1.0,
        ambient_dimension: d,
    })
}

pub fn finite_points(points: Vec<Vec<f64>>) -> Result<ConstraintSet, DomainError> {
    if points.is_empty() {
        return Err(DomainError::EmptyPointSet);
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(DomainError::InconsistentPointDimensions);
    }
    Ok(ConstraintSet::FinitePoints {
        points,
        ambient_dimension: d,
    })
}

impl ConstraintSet {
    pub fn ambient_dimension(&self) -> usize {
        match self {
            ConstraintSet::FinitePoints {
                ambient_dimension, ..
            }
            | ConstraintSet::ParameterizedPath {
                ambient_dimension, ..
            } => *ambient_dimension,
        }
    }

    /// Total arclength for paths; `None` for finite point sets.
    pub fn arclength(&self) -> Option<f64> {
        match self {
            ConstraintSet::FinitePoints { .. } => None,
            ConstraintSet::ParameterizedPath { segments, .. } => {
                Some(segments.iter().map(|s| s.length()).sum())
            }
        }
    }

    /// Evaluate the parameterization ℓ at `param`.
    pub fn embed(&self, param: f64) -> Result<Vec<f64>, DomainError> {
        match self {
            ConstraintSet::FinitePoints { .. } => Err(DomainError::NotAPath),
            ConstraintSet::ParameterizedPath {
                segments,
                param_start,
                param_end,
                ..
            } => {
                if !(param >= *param_start && param < *param_end) {
                    return Err(DomainError::ParameterOutOfRange {
                        param,
                        start: *param_start,
                        end: *param_end,
                    });
                }
                let seg = segments
                    .iter()
                    .find(|s| param >= s.param_start && param < s.param_end)
                    .expect("segments partition the parameter interval");
                Ok(seg.embed(param))
            }
        }
    }

    /// Build an `n_nodes`-point quadrature rule for ∫_{T0}.
    ///
    /// Finite point sets get one unit-weight node per point regardless of
    /// `n_nodes` or `rule`. Path nodes are allocated to segments in
    /// proportion to arclength; corner parameters are never nodes for the
    /// midpoint rule.
    pub fn quadrature(
        &self,
        n_nodes: usize,
        rule: QuadratureKind,
    ) -> Result<QuadratureRule, DomainError> {
        if n_nodes == 0 {
            return Err(DomainError::EmptyQuadrature);
        }
        match self {
            ConstraintSet::FinitePoints { points, .. } => Ok(QuadratureRule {
                params: vec![0.0; points.len()],
                weights: vec![1.0; points.len()],
                ambient_nodes: points.clone(),
            }),
            ConstraintSet::ParameterizedPath { segments, .. } => {
                let counts = allocate_nodes(segments, n_nodes);
                let mut params = Vec::with_capacity(n_nodes);
                let mut weights = Vec::with_capacity(n_nodes);
                let mut ambient = Vec::with_capacity(n_nodes);
                for (seg, &count) in segments.iter().zip(&counts) {
                    if count == 0 {
                        continue;
                    }
                    let (a, b) = (seg.param_start, seg.param_end);
                    match rule {
                        QuadratureKind::Midpoint => {
                            let h = (b - a) / count as f64;
                            for j in 0..count {
                                let u = a + (j as f64 + 0.5) * h;
                                params.push(u);
                                weights.push(h * seg.speed());
                                ambient.push(seg.embed(u));
                            }
                        }
                        QuadratureKind::GaussLegendre => {
                            let (nodes, ws) = gauss_legendre(count);
                            let half = 0.5 * (b - a);
                            let mid = 0.5 * (a + b);
                            for (x, w) in nodes.iter().zip(&ws) {
                                let u = mid + half * x;
                                params.push(u);
                                weights.push(half * w * seg.speed());
                                ambient.push(seg.embed(u));
                            }
                        }
                    }
                }
                Ok(QuadratureRule {
                    params,
                    weights,
                    ambient_nodes: ambient,
                })
            }
        }
    }
}

/// Largest-remainder allocation of `n` nodes proportional to segment length.
fn allocate_nodes(segments: &[PathSegment], n: usize) -> Vec<usize> {
    let total: f64 = segments.iter().map(|s| s.length()).sum();
    let exact: Vec<f64> = segments
        .iter()
        .map(|s| n as f64 * s.length() / total)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = exact[i] - exact[i].floor();
        let rj = exact[j] - exact[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for idx in order.iter().take(n - assigned) {
        counts[*idx] += 1;
    }
    counts
}

/// Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        let (_, d) = legendre_with_derivative(n, 0.0);
        nodes[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (d * d);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Latin hypercube design: M points in [−1, 1]ᵈ whose per-coordinate values
/// occupy the M distinct strata. Deterministic for a given seed.
pub fn latin_hypercube(m: usize, dimension: usize, seed: u64) -> Result<Vec<Vec<f64>>, DomainError> {
    if m == 0 {
        return Err(DomainError::EmptyDesign);
    }
    if dimension == 0 {
        return Err(DomainError::InconsistentPointDimensions);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![vec![0.0; dimension]; m];
    for dim in 0..dimension {
        let mut strata: Vec<usize> = (0..m).collect();
        strata.shuffle(&mut rng);
        for (i, point) in points.iter_mut().enumerate() {
            let u: f64 = rng.random();
            point[dim] = -1.0 + 2.0 * (strata[i] as f64 + u) / m as f64;
        }
    }
    Ok(points)
}

/// JSON mirror of a constraint-set construction, used by CLI configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params", rename_all = "snake_case")]
pub enum ConstraintSpec {
    RectBoundary { lo: [f64; 2], hi: [f64; 2] },
    Diagonal { lo: [f64; 2], hi: [f64; 2] },
    Segment { start: Vec<f64>, end: Vec<f64> },
    Finite { points: Vec<Vec<f64>> },
}

impl ConstraintSpec {
    pub fn build(&self) -> Result<ConstraintSet, DomainError> {
        match self {
            ConstraintSpec::RectBoundary { lo, hi } => rect_boundary(*lo, *hi),
            ConstraintSpec::Diagonal { lo, hi } => diagonal(*lo, *hi),
            ConstraintSpec::Segment { start, end } => segment(start.clone(), end.clone()),
            ConstraintSpec::Finite { points } => finite_points(points.clone()),
        }
    }
}
