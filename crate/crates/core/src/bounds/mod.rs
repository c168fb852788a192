//! Upper, strict lower and margin-parameterized Lipschitz bounds.
//!
//! Every bound is a maximum of pattern norms `N_p(sigma)` over the patterns
//! admitted at some slack level:
//!
//! * `upper`: slack `>= -1e-9` (closed regions),
//! * `lower`: slack `> 1e-9` (regions with interior),
//! * `L_eps`: slack `>= eps - 1e-9`.
//!
//! Two engines produce the same report: exhaustive enumeration
//! ([`brute_force_bounds`]) and depth-first branch and bound
//! ([`branch_and_bound`] and friends).

mod oracle;
mod sampling;
mod search;

use std::time::Instant;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::domain::InputDomain;
use crate::network::{ActivationPattern, MlpNetwork, NetworkError};
use crate::norms::{NormError, NormKind};
use crate::region::{domain_nonempty, witness_at, Admission, RegionError};

pub use oracle::brute_force_bounds;
pub use sampling::{
    difference_quotient, pairwise_quotient_estimate, sample_domain, sampled_lower_bound, SampleEstimate,
    SAMPLE_MARGIN,
};
pub use search::{branch_and_bound, node_upper_bound, unconstrained_bound, PartialAssignment, SearchOutcome, Target};

/// Largest number of hidden neurons the exhaustive oracle accepts.
pub const ENUMERATION_LIMIT: usize = 24;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("{bits} hidden neurons exceed the enumeration limit of {limit}")]
    TooManyBits { bits: usize, limit: usize },
    #[error("eps must be a finite number >= 0, got {0}")]
    InvalidEps(f64),
    #[error("no admissible pattern at level {0}, so there is no witness")]
    NoWitness(String),
    #[error("sample count must be positive")]
    NoSamples,
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl BoundsError {
    /// True when the failure is an empty input domain.
    pub fn is_empty_domain(&self) -> bool {
        matches!(self, BoundsError::Region(RegionError::EmptyDomain))
    }
}

/// Relative tolerance under which two pattern norms count as the same value.
pub(crate) fn value_tol(v: f64) -> f64 {
    1e-12 * v.abs().max(1.0)
}

/// Maximum of `N_p` over one admitted pattern set.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremum {
    /// `0` when no pattern is admitted.
    pub value: f64,
    /// Argmax pattern, lexicographically smallest among ties.
    pub pattern: Option<ActivationPattern>,
    /// A domain point realizing `pattern` at the admission level.
    pub witness: Option<Vec<f64>>,
}

impl Extremum {
    pub fn is_empty(&self) -> bool {
        self.pattern.is_none()
    }

    fn empty() -> Self {
        Self { value: 0.0, pattern: None, witness: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsEntry {
    pub eps: f64,
    pub bound: Extremum,
}

/// `value` holds on `(previous eps, eps]`; the final point has `eps = inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub eps: f64,
    pub value: f64,
    /// No pattern is admitted on this interval.
    pub empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    BranchAndBound,
    Oracle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::BranchAndBound => "bnb",
            Mode::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchStats {
    pub nodes_explored: u64,
    pub lp_calls: u64,
    /// Oracle: patterns with a closed region. Branch and bound: admitted
    /// leaves reached across all searches.
    pub patterns_feasible: u64,
}

impl std::ops::AddAssign for SearchStats {
    fn add_assign(&mut self, rhs: Self) {
        self.nodes_explored += rhs.nodes_explored;
        self.lp_calls += rhs.lp_calls;
        self.patterns_feasible += rhs.patterns_feasible;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub p: NormKind,
    pub upper: Extremum,
    pub lower: Extremum,
    /// In request order.
    pub eps: Vec<EpsEntry>,
    pub curve: Vec<CurvePoint>,
    /// Set when an L2 ball was replaced by its bounding box; `upper` stays
    /// valid but `lower` and `eps` no longer bound the original problem.
    pub domain_relaxed: bool,
    pub mode: Mode,
    pub stats: SearchStats,
    pub wall_time_ms: f64,
}

impl BoundsReport {
    pub fn eps_entry(&self, eps: f64) -> Option<&EpsEntry> {
        self.eps.iter().find(|e| e.eps == eps)
    }

    /// Curve value at `eps > 0`.
    pub fn curve_value(&self, eps: f64) -> f64 {
        self.curve
            .iter()
            .find(|c| eps <= c.eps)
            .map_or(0.0, |c| c.value)
    }

    /// JSON form. Wall time is left out so identical runs give identical
    /// bytes.
    pub fn to_json(&self) -> Value {
        let mut eps_values = Map::new();
        let mut eps_details = Vec::new();
        for e in &self.eps {
            let key = format_eps(e.eps);
            eps_values.insert(key.clone(), json!(e.bound.value));
            eps_details.push(json!({
                "eps": e.eps,
                "value": e.bound.value,
                "empty": e.bound.is_empty(),
                "pattern": e.bound.pattern,
                "witness_x": e.bound.witness,
            }));
        }
        let curve: Vec<Value> = self
            .curve
            .iter()
            .map(|c| {
                let mut v = json!({ "eps": finite_or_inf(c.eps), "value": c.value });
                if c.empty {
                    v["empty"] = json!(true);
                }
                v
            })
            .collect();
        json!({
            "p": self.p,
            "upper": self.upper.value,
            "lower": self.lower.value,
            "lower_empty": self.lower.is_empty(),
            "eps_values": eps_values,
            "eps_details": eps_details,
            "curve": curve,
            "argmax_upper": self.upper.pattern,
            "argmax_lower": self.lower.pattern,
            "witness_x": self.lower.witness,
            "witness_upper": self.upper.witness,
            "domain_relaxed": self.domain_relaxed,
            "stats": {
                "mode": self.mode.name(),
                "nodes_explored": self.stats.nodes_explored,
                "lp_calls": self.stats.lp_calls,
                "patterns_feasible": self.stats.patterns_feasible,
            },
        })
    }
}

/// Shortest decimal form of `eps` used as a JSON key.
pub fn format_eps(eps: f64) -> String {
    if eps.is_infinite() {
        "inf".into()
    } else {
        format!("{eps}")
    }
}

fn finite_or_inf(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!("inf")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundsOptions {
    pub mode: Mode,
    /// Replace an L2 ball by its bounding box instead of failing.
    pub relax_ball_to_box: bool,
    /// Worker threads; results do not depend on it.
    pub threads: usize,
}

impl Default for BoundsOptions {
    fn default() -> Self {
        Self { mode: Mode::BranchAndBound, relax_ball_to_box: false, threads: 1 }
    }
}

/// Full report with either engine.
pub fn compute_bounds(
    net: &MlpNetwork,
    domain: &InputDomain,
    p: NormKind,
    eps: &[f64],
    options: BoundsOptions,
) -> Result<BoundsReport, BoundsError> {
    let relaxed = !domain.is_polyhedral() && options.relax_ball_to_box;
    let domain = if relaxed { domain.circumscribed_box() } else { domain.clone() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.threads.max(1))
        .build()
        .expect("thread pool construction");
    let mut report = pool.install(|| match options.mode {
        Mode::Oracle => brute_force_bounds(net, &domain, p, eps),
        Mode::BranchAndBound => search::search_report(net, &domain, p, eps),
    })?;
    report.domain_relaxed = relaxed;
    Ok(report)
}

fn check_eps(eps: &[f64]) -> Result<(), BoundsError> {
    match eps.iter().find(|e| !e.is_finite() || **e < 0.0) {
        Some(&bad) => Err(BoundsError::InvalidEps(bad)),
        None => Ok(()),
    }
}

/// Shared preconditions: shapes, polyhedral nonempty domain, valid levels.
fn prepare(net: &MlpNetwork, domain: &InputDomain, eps: &[f64]) -> Result<Instant, BoundsError> {
    check_eps(eps)?;
    domain_nonempty(domain, net.input_dim())?;
    Ok(Instant::now())
}

fn extremum(
    net: &MlpNetwork,
    domain: &InputDomain,
    best: Option<(f64, ActivationPattern)>,
    level: f64,
) -> Result<Extremum, BoundsError> {
    match best {
        None => Ok(Extremum::empty()),
        Some((value, sigma)) => {
            let witness = witness_at(net, &sigma, domain, level)?;
            Ok(Extremum { value, pattern: Some(sigma), witness })
        }
    }
}

/// Admission rule of an `eps` entry.
fn eps_admission(eps: f64) -> Admission {
    Admission::Closed(eps)
}

/// Folds `(breakpoint, value)` steps into a strictly decreasing curve.
/// `steps` are sorted by breakpoint and end with the `inf` interval.
fn merge_curve(steps: Vec<CurvePoint>) -> Vec<CurvePoint> {
    let mut out: Vec<CurvePoint> = Vec::with_capacity(steps.len());
    for s in steps {
        match out.last_mut() {
            Some(last) if !s.empty && !last.empty && last.value - s.value <= value_tol(last.value) => {
                last.eps = s.eps;
            }
            _ => out.push(s),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_merging() {
        let pt = |eps: f64, value: f64, empty: bool| CurvePoint { eps, value, empty };
        let merged = merge_curve(vec![
            pt(0.1, 3.0, false),
            pt(0.2, 3.0, false),
            pt(0.5, 1.0, false),
            pt(f64::INFINITY, 0.0, true),
        ]);
        assert_eq!(
            merged,
            vec![pt(0.2, 3.0, false), pt(0.5, 1.0, false), pt(f64::INFINITY, 0.0, true)]
        );
    }

    #[test]
    fn eps_formatting() {
        assert_eq!(format_eps(0.1), "0.1");
        assert_eq!(format_eps(5.0), "5");
        assert_eq!(format_eps(f64::INFINITY), "inf");
    }
}
