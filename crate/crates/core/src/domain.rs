//! Input sets over which Lipschitz constants are bounded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("malformed domain JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("domain has dimension {got}, network input has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("box bound {index} has lower {lower} > upper {upper}")]
    InvertedBox { index: usize, lower: f64, upper: f64 },
    #[error("polytope row {row} has {got} coefficients, expected {expected}")]
    PolytopeShape { row: usize, expected: usize, got: usize },
    #[error("polytope has {rows} rows but {rhs} right-hand sides")]
    PolytopeRows { rows: usize, rhs: usize },
    #[error("L2 ball radius must be positive, got {0}")]
    Radius(f64),
    #[error("domain contains a non-finite value")]
    NonFinite,
}

/// `AllSpace`, a closed box, a polytope `{x : A x <= b}` or a Euclidean ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum InputDomain {
    #[serde(rename = "all")]
    AllSpace,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Polytope {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    #[serde(rename = "l2ball")]
    L2Ball { center: Vec<f64>, radius: f64 },
}

impl InputDomain {
    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("domain serialization is infallible")
    }

    /// The symmetric box `[-r, r]^n`.
    pub fn cube(n: usize, r: f64) -> Self {
        Self::Box {
            lower: vec![-r; n],
            upper: vec![r; n],
        }
    }

    /// Checks internal consistency and that the dimension matches `input_dim`.
    pub fn validate(&self, input_dim: usize) -> Result<(), DomainError> {
        let dim_check = |got: usize| {
            if got != input_dim {
                Err(DomainError::Dimension { expected: input_dim, got })
            } else {
                Ok(())
            }
        };
        match self {
            Self::AllSpace => Ok(()),
            Self::Box { lower, upper } => {
                dim_check(lower.len())?;
                dim_check(upper.len())?;
                for (i, (l, u)) in lower.iter().zip(upper).enumerate() {
                    if l.is_nan() || u.is_nan() {
                        return Err(DomainError::NonFinite);
                    }
                    if l > u {
                        return Err(DomainError::InvertedBox { index: i, lower: *l, upper: *u });
                    }
                }
                Ok(())
            }
            Self::Polytope { a, b } => {
                if a.len() != b.len() {
                    return Err(DomainError::PolytopeRows { rows: a.len(), rhs: b.len() });
                }
                for (row, coeffs) in a.iter().enumerate() {
                    if coeffs.len() != input_dim {
                        return Err(DomainError::PolytopeShape {
                            row,
                            expected: input_dim,
                            got: coeffs.len(),
                        });
                    }
                }
                if a.iter().flatten().chain(b).any(|v| !v.is_finite()) {
                    return Err(DomainError::NonFinite);
                }
                Ok(())
            }
            Self::L2Ball { center, radius } => {
                dim_check(center.len())?;
                if center.iter().any(|v| !v.is_finite()) || !radius.is_finite() {
                    return Err(DomainError::NonFinite);
                }
                if *radius <= 0.0 {
                    return Err(DomainError::Radius(*radius));
                }
                Ok(())
            }
        }
    }

    pub fn is_polyhedral(&self) -> bool {
        !matches!(self, Self::L2Ball { .. })
    }

    /// Smallest box containing the domain, when it is a ball. Polyhedral
    /// domains are returned unchanged.
    pub fn circumscribed_box(&self) -> Self {
        match self {
            Self::L2Ball { center, radius } => Self::Box {
                lower: center.iter().map(|c| c - radius).collect(),
                upper: center.iter().map(|c| c + radius).collect(),
            },
            other => other.clone(),
        }
    }

    /// Membership test with absolute tolerance `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            Self::AllSpace => true,
            Self::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            Self::Polytope { a, b } => a
                .iter()
                .zip(b)
                .all(|(row, rhs)| crate::linalg::dot(row, x) <= rhs + tol),
            Self::L2Ball { center, radius } => {
                let d2: f64 = x.iter().zip(center).map(|(v, c)| (v - c) * (v - c)).sum();
                d2.sqrt() <= radius + tol
            }
        }
    }
}
