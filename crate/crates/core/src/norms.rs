//! Induced operator norms for `p` in {1, 2, inf}, with norm-achieving
//! witness vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm2, Matrix};
use crate::network::{ActivationPattern, MlpNetwork, NetworkError};

/// Iteration cap per start vector for the spectral norm.
pub const MAX_POWER_ITERATIONS: usize = 10_000;
/// Relative tolerance the spectral estimate must meet to count as converged.
pub const SPECTRAL_TOLERANCE: f64 = 1e-10;
const STALL_CHANGE: f64 = 1e-14;
const STALL_ROUNDS: usize = 5;
const VECTOR_STEP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NormError {
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("power iteration did not converge; best estimate {estimate}")]
    NoConvergence { estimate: f64 },
    #[error("unsupported norm '{0}' (expected 1, 2 or inf)")]
    Unsupported(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NormKind {
    L1,
    L2,
    LInf,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::L1, NormKind::L2, NormKind::LInf];

    /// `||v||_p`.
    pub fn vector_norm(self, v: &[f64]) -> f64 {
        match self {
            NormKind::L1 => v.iter().map(|x| x.abs()).sum(),
            NormKind::L2 => norm2(v),
            NormKind::LInf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::L1 => "1",
            NormKind::L2 => "2",
            NormKind::LInf => "inf",
        })
    }
}

impl FromStr for NormKind {
    type Err = NormError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" => Ok(NormKind::L1),
            "2" => Ok(NormKind::L2),
            "inf" | "infinity" | "∞" => Ok(NormKind::LInf),
            other => Err(NormError::Unsupported(other.to_string())),
        }
    }
}

// Serialized as the numbers 1 and 2, or the string "inf".
impl Serialize for NormKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NormKind::L1 => s.serialize_u8(1),
            NormKind::L2 => s.serialize_u8(2),
            NormKind::LInf => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        let text = match &v {
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::String(s) => s.clone(),
            _ => return Err(serde::de::Error::custom("norm must be 1, 2 or \"inf\"")),
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Result of the spectral-norm power iteration.
#[derive(Debug, Clone)]
pub struct SpectralEstimate {
    /// `||A v||_2` for the returned unit vector `v`; never exceeds the true norm.
    pub value: f64,
    pub vector: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// `||A||_p`.
pub fn operator_norm(a: &Matrix, p: NormKind) -> Result<f64, NormError> {
    if !a.is_finite() {
        return Err(NormError::NonFinite);
    }
    Ok(match p {
        NormKind::L1 => max_abs_column_sum(a).1,
        NormKind::LInf => max_abs_row_sum(a).1,
        NormKind::L2 => {
            let est = spectral_estimate(a);
            if !est.converged {
                return Err(NormError::NoConvergence { estimate: est.value });
            }
            est.value
        }
    })
}

/// `||J(sigma)||_p` for the pattern Jacobian of `sigma`.
pub fn pattern_norm(net: &MlpNetwork, sigma: &ActivationPattern, p: NormKind) -> Result<f64, NormError> {
    operator_norm(&net.jacobian(sigma)?, p)
}

/// Unit vector `y` (in the `p`-norm) with `||A y||_p = ||A||_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormWitness {
    pub vector: Vec<f64>,
    /// Set when `A` is zero and any unit vector attains the norm.
    pub degenerate: bool,
}

pub fn norm_witness(a: &Matrix, p: NormKind) -> Result<NormWitness, NormError> {
    if !a.is_finite() {
        return Err(NormError::NonFinite);
    }
    let n = a.cols();
    let basis = |j: usize| {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        e
    };
    if a.as_slice().iter().all(|&v| v == 0.0) {
        return Ok(NormWitness { vector: basis(0), degenerate: true });
    }
    let vector = match p {
        NormKind::L1 => basis(max_abs_column_sum(a).0),
        NormKind::LInf => {
            let (i, _) = max_abs_row_sum(a);
            a.row(i).iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect()
        }
        NormKind::L2 => {
            let est = spectral_estimate(a);
            if !est.converged {
                return Err(NormError::NoConvergence { estimate: est.value });
            }
            est.vector
        }
    };
    Ok(NormWitness { vector, degenerate: false })
}

/// Index and value of the largest absolute column sum; lowest index on ties.
fn max_abs_column_sum(a: &Matrix) -> (usize, f64) {
    let mut best = (0, 0.0);
    for j in 0..a.cols() {
        let mut s = 0.0;
        for i in 0..a.rows() {
            s += a[(i, j)].abs();
        }
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

fn max_abs_row_sum(a: &Matrix) -> (usize, f64) {
    let mut best = (0, 0.0);
    for i in 0..a.rows() {
        let s: f64 = a.row(i).iter().fold(0.0, |acc, v| acc + v.abs());
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

/// Largest singular value by power iteration on `A^T A`.
///
/// Runs from the normalized all-ones vector, then from `e_1`, then from a
/// fixed irregular vector, and keeps the best run (earliest on ties). A run
/// stops once the Rayleigh quotient changes by less than `1e-14` relative for
/// five consecutive iterations while the iterate has settled, or when its iterate collapses to zero. The
/// extra starts cover matrices whose top singular direction is orthogonal to
/// the first start, e.g. `[[0, 1, -1]]`.
pub fn spectral_estimate(a: &Matrix) -> SpectralEstimate {
    let n = a.cols();
    let ones = vec![1.0 / (n as f64).sqrt(); n];
    let mut e1 = vec![0.0; n];
    e1[0] = 1.0;
    let irregular: Vec<f64> = {
        let raw: Vec<f64> = (0..n).map(|j| (1.0 + 1.618_033_988_749_895 * j as f64).sin()).collect();
        let s = norm2(&raw);
        raw.iter().map(|v| v / s).collect()
    };

    let mut best: Option<SpectralEstimate> = None;
    for start in [ones, e1, irregular] {
        let run = power_run(a, start);
        best = match best {
            Some(b) if b.value >= run.value => Some(b),
            _ => Some(run),
        };
    }
    let mut est = best.expect("at least one start");
    orient(&mut est.vector);
    est.value = norm2(&a.matvec(&est.vector));
    est
}

fn power_run(a: &Matrix, mut v: Vec<f64>) -> SpectralEstimate {
    let mut lambda = {
        let w = a.matvec(&v);
        crate::linalg::dot(&w, &w)
    };
    let mut calm = 0;
    let mut last_change = f64::INFINITY;
    for it in 1..=MAX_POWER_ITERATIONS {
        let w = a.matvec(&v);
        let z = a.transpose_matvec(&w);
        let nz = norm2(&z);
        if nz == 0.0 || !nz.is_finite() {
            // Start vector lies in the null space of A.
            return SpectralEstimate {
                value: lambda.max(0.0).sqrt(),
                vector: v,
                converged: true,
                iterations: it,
            };
        }
        let next: Vec<f64> = z.iter().map(|x| x / nz).collect();
        let wn = a.matvec(&next);
        let next_lambda = crate::linalg::dot(&wn, &wn);
        last_change = (next_lambda - lambda).abs() / next_lambda.max(f64::MIN_POSITIVE);
        let step = next.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        lambda = next_lambda;
        if last_change < STALL_CHANGE {
            calm += 1;
            // Near-degenerate top singular values leave the vector drifting
            // after the value has settled; give up on it after a while.
            if (calm >= STALL_ROUNDS && step < VECTOR_STEP) || calm >= 10 * STALL_ROUNDS {
                return SpectralEstimate {
                    value: lambda.sqrt(),
                    vector: v,
                    converged: true,
                    iterations: it,
                };
            }
        } else {
            calm = 0;
        }
    }
    SpectralEstimate {
        value: lambda.sqrt(),
        vector: v,
        converged: last_change <= SPECTRAL_TOLERANCE,
        iterations: MAX_POWER_ITERATIONS,
    }
}

/// Sign convention: the largest-magnitude entry (lowest index on ties) is
/// positive.
fn orient(v: &mut [f64]) {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v.get(pivot).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}
