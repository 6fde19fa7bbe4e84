//! Covariance kernel families, Gram-matrix assembly, and the
//! universality-preserving combinators (variance scaling, sums).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: kernel expects dimension {expected}, point has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid kernel parameter {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("kernel dimensions disagree: {left} vs {right}")]
    IncompatibleDimensions { left: usize, right: usize },

    #[error("powered-exponential rates/exponents must be nonempty and of equal length")]
    BadPoweredExponentialShape,
}

/// Half-integer Matérn smoothness values with closed-form kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaternSmoothness {
    /// ν = 1/2, the exponential kernel.
    #[serde(rename = "1/2")]
    Half,
    /// ν = 3/2.
    #[serde(rename = "3/2")]
    ThreeHalves,
    /// ν = 5/2.
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl MaternSmoothness {
    pub fn value(self) -> f64 {
        match self {
            MaternSmoothness::Half => 0.5,
            MaternSmoothness::ThreeHalves => 1.5,
            MaternSmoothness::FiveHalves => 2.5,
        }
    }
}

/// Positive scaling function σ used by [`scale_variance`].
///
/// Kept as a closed enum so scaled kernels stay serializable for CLI configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleFn {
    Constant { value: f64 },
    /// σ(s) = 1 + |s|².
    OnePlusNormSq,
}

impl ScaleFn {
    pub fn eval(&self, s: &[f64]) -> f64 {
        match self {
            ScaleFn::Constant { value } => *value,
            ScaleFn::OnePlusNormSq => 1.0 + s.iter().map(|x| x * x).sum::<f64>(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    /// k(s,t) = exp(−|s−t|²/ℓ²). With ℓ = 1 this is exp(−|s−t|²).
    SquaredExponential { lengthscale: f64 },
    Matern {
        smoothness: MaternSmoothness,
        lengthscale: f64,
    },
    /// k(s,t) = C·exp(−Σᵢ ℓᵢ|sᵢ−tᵢ|^{pᵢ}), pᵢ ∈ (0, 2].
    PoweredExponential {
        amplitude: f64,
        rates: Vec<f64>,
        exponents: Vec<f64>,
    },
    /// q(s,t) = σ(s)σ(t)·base(s,t) with 0 < m ≤ σ ≤ M.
    VarianceScaled {
        base: Box<Kernel>,
        scale: ScaleFn,
        lower_bound: f64,
        upper_bound: f64,
    },
    Sum {
        left: Box<Kernel>,
        right: Box<Kernel>,
    },
}

/// A symmetric positive-semidefinite covariance function on ℝᵈ × ℝᵈ.
///
/// Values are immutable after construction and all evaluation is pure,
/// so kernels are safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelJson", into = "KernelJson")]
pub struct Kernel {
    family: KernelFamily,
    dimension: usize,
}

impl Kernel {
    pub fn squared_exponential(dimension: usize, lengthscale: f64) -> Result<Self, KernelError> {
        require_positive("lengthscale", lengthscale)?;
        require_dimension(dimension)?;
        Ok(Kernel {
            family: KernelFamily::SquaredExponential { lengthscale },
            dimension,
        })
    }

    pub fn matern(
        dimension: usize,
        smoothness: MaternSmoothness,
        lengthscale: f64,
    ) -> Result<Self, KernelError> {
        require_positive("lengthscale", lengthscale)?;
        require_dimension(dimension)?;
        Ok(Kernel {
            family: KernelFamily::Matern {
                smoothness,
                lengthscale,
            },
            dimension,
        })
    }

    /// Dimension is `rates.len()`; each exponent must lie in (0, 2].
    pub fn powered_exponential(
        amplitude: f64,
        rates: Vec<f64>,
        exponents: Vec<f64>,
    ) -> Result<Self, KernelError> {
        require_positive("amplitude", amplitude)?;
        if rates.is_empty() || rates.len() != exponents.len() {
            return Err(KernelError::BadPoweredExponentialShape);
        }
        for &r in &rates {
            require_positive("rate", r)?;
        }
        for &p in &exponents {
            if !(p > 0.0 && p <= 2.0) {
                return Err(KernelError::InvalidParameter {
                    name: "exponent",
                    value: p,
                    reason: "must lie in (0, 2]",
                });
            }
        }
        let dimension = rates.len();
        Ok(Kernel {
            family: KernelFamily::PoweredExponential {
                amplitude,
                rates,
                exponents,
            },
            dimension,
        })
    }

    pub fn sum(left: Kernel, right: Kernel) -> Result<Self, KernelError> {
        if left.dimension != right.dimension {
            return Err(KernelError::IncompatibleDimensions {
                left: left.dimension,
                right: right.dimension,
            });
        }
        let dimension = left.dimension;
        Ok(Kernel {
            family: KernelFamily::Sum {
                left: Box::new(left),
                right: Box::new(right),
            },
            dimension,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    /// Hölder exponent γ ∈ (0, 2] of the squared RKHS distance
    /// k(s,s) − 2k(s,t) + k(t,t) ≤ B·|s−t|^γ. Declared per family.
    pub fn holder_exponent(&self) -> f64 {
        match &self.family {
            KernelFamily::SquaredExponential { .. } => 2.0,
            KernelFamily::Matern { smoothness, .. } => (2.0 * smoothness.value()).min(2.0),
            KernelFamily::PoweredExponential { exponents, .. } => {
                exponents.iter().cloned().fold(f64::INFINITY, f64::min)
            }
            KernelFamily::VarianceScaled { base, .. } => base.holder_exponent(),
            KernelFamily::Sum { left, right } => {
                left.holder_exponent().min(right.holder_exponent())
            }
        }
    }

    /// Evaluate k(s, t). Symmetric in its arguments.
    pub fn eval(&self, s: &[f64], t: &[f64]) -> Result<f64, KernelError> {
        self.check_point(s)?;
        self.check_point(t)?;
        Ok(self.eval_unchecked(s, t))
    }

    pub(crate) fn check_point(&self, p: &[f64]) -> Result<(), KernelError> {
        if p.len() != self.dimension {
            return Err(KernelError::DimensionMismatch {
                expected: self.dimension,
                actual: p.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn eval_unchecked(&self, s: &[f64], t: &[f64]) -> f64 {
        match &self.family {
            KernelFamily::SquaredExponential { lengthscale } => {
                let r2 = sq_dist(s, t) / (lengthscale * lengthscale);
                (-r2).exp()
            }
            KernelFamily::Matern {
                smoothness,
                lengthscale,
            } => {
                let r = sq_dist(s, t).sqrt() / lengthscale;
                match smoothness {
                    MaternSmoothness::Half => (-r).exp(),
                    MaternSmoothness::ThreeHalves => {
                        let a = 3.0_f64.sqrt() * r;
                        (1.0 + a) * (-a).exp()
                    }
                    MaternSmoothness::FiveHalves => {
                        let a = 5.0_f64.sqrt() * r;
                        (1.0 + a + a * a / 3.0) * (-a).exp()
                    }
                }
            }
            KernelFamily::PoweredExponential {
                amplitude,
                rates,
                exponents,
            } => {
                let mut acc = 0.0;
                for i in 0..s.len() {
                    acc += rates[i] * (s[i] - t[i]).abs().powf(exponents[i]);
                }
                amplitude * (-acc).exp()
            }
            KernelFamily::VarianceScaled { base, scale, .. } => {
                scale.eval(s) * scale.eval(t) * base.eval_unchecked(s, t)
            }
            KernelFamily::Sum { left, right } => {
                left.eval_unchecked(s, t) + right.eval_unchecked(s, t)
            }
        }
    }

    /// Gram matrix with entry (i, j) = k(aᵢ, bⱼ).
    ///
    /// Empty point lists yield 0×n matrices rather than errors. When `a`
    /// and `b` are the same slice the symmetric half is mirrored.
    pub fn gram(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>, KernelError> {
        for p in a.iter().chain(b.iter()) {
            self.check_point(p)?;
        }
        let mut m = DMatrix::zeros(a.len(), b.len());
        let same = std::ptr::eq(a, b) || (a.len() == b.len() && a == b);
        if same {
            for i in 0..a.len() {
                for j in i..a.len() {
                    let v = self.eval_unchecked(&a[i], &a[j]);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
        } else {
            for (i, p) in a.iter().enumerate() {
                for (j, q) in b.iter().enumerate() {
                    m[(i, j)] = self.eval_unchecked(p, q);
                }
            }
        }
        Ok(m)
    }

    /// Kernel-section values k(s, xᵢ) for a list of nodes.
    pub(crate) fn section(&self, s: &[f64], nodes: &[Vec<f64>]) -> Result<Vec<f64>, KernelError> {
        self.check_point(s)?;
        nodes
            .iter()
            .map(|x| {
                self.check_point(x)?;
                Ok(self.eval_unchecked(s, x))
            })
            .collect()
    }
}

/// Wrap `base` with a positive variance profile: σ(s)·σ(t)·base(s, t).
///
/// The declared bounds 0 < m ≤ σ ≤ M are recorded for diagnostics; they are
/// what keeps the scaled kernel universal when the base is.
pub fn scale_variance(
    base: Kernel,
    scale: ScaleFn,
    lower_bound: f64,
    upper_bound: f64,
) -> Result<Kernel, KernelError> {
    require_positive("lower_bound", lower_bound)?;
    require_positive("upper_bound", upper_bound)?;
    if upper_bound < lower_bound {
        return Err(KernelError::InvalidParameter {
            name: "upper_bound",
            value: upper_bound,
            reason: "must be at least the lower bound",
        });
    }
    let dimension = base.dimension;
    Ok(Kernel {
        family: KernelFamily::VarianceScaled {
            base: Box::new(base),
            scale,
            lower_bound,
            upper_bound,
        },
        dimension,
    })
}

fn require_positive(name: &'static str, value: f64) -> Result<(), KernelError> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(KernelError::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        });
    }
    Ok(())
}

fn require_dimension(d: usize) -> Result<(), KernelError> {
    if d == 0 {
        return Err(KernelError::InvalidParameter {
            name: "dimension",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    Ok(())
}

fn sq_dist(s: &[f64], t: &[f64]) -> f64 {
    s.iter()
        .zip(t.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// JSON mirror of [`Kernel`]: `{"family": "...", "params": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
enum KernelJson {
    SquaredExponential {
        dimension: usize,
        lengthscale: f64,
    },
    Matern {
        dimension: usize,
        smoothness: MaternSmoothness,
        lengthscale: f64,
    },
    PoweredExponential {
        amplitude: f64,
        rates: Vec<f64>,
        exponents: Vec<f64>,
    },
    VarianceScaled {
        base: Box<KernelJson>,
        scale: ScaleFn,
        lower_bound: f64,
        upper_bound: f64,
    },
    Sum {
        left: Box<KernelJson>,
        right: Box<KernelJson>,
    },
}

impl TryFrom<KernelJson> for Kernel {
    type Error = KernelError;

    fn try_from(j: KernelJson) -> Result<Self, KernelError> {
        match j {
            KernelJson::SquaredExponential {
                dimension,
                lengthscale,
            } => Kernel::squared_exponential(dimension, lengthscale),
            KernelJson::Matern {
                dimension,
                smoothness,
                lengthscale,
            } => Kernel::matern(dimension, smoothness, lengthscale),
            KernelJson::PoweredExponential {
                amplitude,
                rates,
                exponents,
            } => Kernel::powered_exponential(amplitude, rates, exponents),
            KernelJson::VarianceScaled {
                base,
                scale,
                lower_bound,
                upper_bound,
            } => scale_variance(Kernel::try_from(*base)?, scale, lower_bound, upper_bound),
            KernelJson::Sum { left, right } => {
                Kernel::sum(Kernel::try_from(*left)?, Kernel::try_from(*right)?)
            }
        }
    }
}

impl From<Kernel> for KernelJson {
    fn from(k: Kernel) -> KernelJson {
        match k.family {
            KernelFamily::SquaredExponential { lengthscale } => KernelJson::SquaredExponential {
                dimension: k.dimension,
                lengthscale,
            },
            KernelFamily::Matern {
                smoothness,
                lengthscale,
            } => KernelJson::Matern {
                dimension: k.dimension,
                smoothness,
                lengthscale,
            },
            KernelFamily::PoweredExponential {
                amplitude,
                rates,
                exponents,
            } => KernelJson::PoweredExponential {
                amplitude,
                rates,
                exponents,
            },
            KernelFamily::VarianceScaled {
                base,
                scale,
                lower_bound,
                upper_bound,
            } => KernelJson::VarianceScaled {
                base: Box::new(KernelJson::from(*base)),
                scale,
                lower_bound,
                upper_bound,
            },
            KernelFamily::Sum { left, right } => KernelJson::Sum {
                left: Box::new(KernelJson::from(*left)),
                right: Box::new(KernelJson::from(*right)),
            },
        }
    }
}
