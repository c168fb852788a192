//! Activation-region feasibility through the maximal common margin
//! `max t  s.t. (sigma - 1/2) * theta(x) >= t` over the input domain.

use thiserror::Error;

use crate::domain::{DomainError, InputDomain};
use crate::linalg::norm2;
use crate::network::{ActivationPattern, AffineForm, MlpNetwork, NetworkError};
use crate::simplex::{lp_solve, LinearProgram, LpError, LpOutcome, Relation, VarBounds};

/// Strictness knob: a region is nonempty when its slack exceeds this.
pub const STRICT_TOL: f64 = 1e-9;
/// Closed admission at level `eps` accepts slacks down to `eps - CLOSED_TOL`.
pub const CLOSED_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("the LP oracle needs a polyhedral domain; L2 balls must be relaxed to a box explicitly")]
    NonPolyhedralDomain,
    #[error("the input domain is empty")]
    EmptyDomain,
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlackResult {
    Bounded { slack: f64, witness: Vec<f64> },
    /// The margin grows without bound along `ray` (over `(x, t)`).
    UnboundedAbove { ray: Vec<f64> },
}

impl SlackResult {
    /// `+inf` for unbounded results.
    pub fn slack(&self) -> f64 {
        match self {
            SlackResult::Bounded { slack, .. } => *slack,
            SlackResult::UnboundedAbove { .. } => f64::INFINITY,
        }
    }
}

/// Which slacks count as "region present".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Admission {
    /// `slack >= eps - CLOSED_TOL`.
    Closed(f64),
    /// `slack > STRICT_TOL`.
    Strict,
    /// `slack > level`, exact comparison.
    Above(f64),
}

impl Admission {
    pub fn admits(self, slack: f64) -> bool {
        match self {
            Admission::Closed(eps) => slack >= eps - CLOSED_TOL,
            Admission::Strict => slack > STRICT_TOL,
            Admission::Above(level) => slack > level,
        }
    }
}

/// Slack `eps_hat(sigma)`.
pub fn max_slack(
    net: &MlpNetwork,
    sigma: &ActivationPattern,
    domain: &InputDomain,
) -> Result<SlackResult, RegionError> {
    net.check_pattern(sigma)?;
    domain.validate(net.input_dim())?;
    prefix_slack(net, &sigma.bits, net.depth() - 1, domain)
}

pub fn region_feasible(
    net: &MlpNetwork,
    sigma: &ActivationPattern,
    domain: &InputDomain,
    mode: Admission,
) -> Result<bool, RegionError> {
    Ok(mode.admits(max_slack(net, sigma, domain)?.slack()))
}

/// A point of the domain whose margin for `sigma` is at least
/// `level - CLOSED_TOL`, or `None` when no such point exists.
pub fn witness_at(
    net: &MlpNetwork,
    sigma: &ActivationPattern,
    domain: &InputDomain,
    level: f64,
) -> Result<Option<Vec<f64>>, RegionError> {
    match max_slack(net, sigma, domain)? {
        SlackResult::Bounded { slack, witness } => {
            Ok((slack >= level - CLOSED_TOL).then_some(witness))
        }
        SlackResult::UnboundedAbove { .. } => {
            let cap = level.max(0.0) + 1.0;
            let forms = net.preactivation_forms(&sigma.bits, net.depth() - 1);
            let mut lp = slack_program(&forms, &sigma.bits, domain)?;
            let mut row = vec![0.0; lp.num_vars()];
            row[lp.num_vars() - 1] = 1.0;
            lp.constrain(row, Relation::Le, cap);
            match lp_solve(&lp)? {
                LpOutcome::Optimal { mut point, .. } => {
                    point.pop();
                    Ok(Some(point))
                }
                LpOutcome::Infeasible => Err(RegionError::EmptyDomain),
                LpOutcome::Unbounded { .. } => {
                    Err(LpError::NumericalBreakdown("capped margin LP reported unbounded".into()).into())
                }
            }
        }
    }
}

/// Slack over the constraints of hidden layers `1..=upto` only. Later layers
/// are unconstrained, so this bounds the slack of every completion from
/// above. Callers validate shapes.
pub(crate) fn prefix_slack(
    net: &MlpNetwork,
    gates: &[Vec<bool>],
    upto: usize,
    domain: &InputDomain,
) -> Result<SlackResult, RegionError> {
    let forms = net.preactivation_forms(gates, upto);
    let lp = slack_program(&forms, gates, domain)?;
    match lp_solve(&lp)? {
        LpOutcome::Optimal { value, mut point } => {
            point.pop();
            Ok(SlackResult::Bounded { slack: value, witness: point })
        }
        LpOutcome::Unbounded { ray } => Ok(SlackResult::UnboundedAbove { ray }),
        LpOutcome::Infeasible => Err(RegionError::EmptyDomain),
    }
}

/// Checks that a polyhedral domain is nonempty.
pub fn domain_nonempty(domain: &InputDomain, input_dim: usize) -> Result<(), RegionError> {
    domain.validate(input_dim)?;
    let lp = slack_program_dim(input_dim, &[], &[], domain)?;
    match lp_solve(&lp)? {
        LpOutcome::Infeasible => Err(RegionError::EmptyDomain),
        _ => Ok(()),
    }
}

fn slack_program(
    forms: &[Vec<AffineForm>],
    gates: &[Vec<bool>],
    domain: &InputDomain,
) -> Result<LinearProgram, RegionError> {
    let n = forms
        .first()
        .and_then(|layer| layer.first())
        .map_or(0, |f| f.coeffs.len());
    slack_program_dim(n, forms, gates, domain)
}

/// Variables `(x_1 .. x_n, t)`, objective `t`.
fn slack_program_dim(
    n: usize,
    forms: &[Vec<AffineForm>],
    gates: &[Vec<bool>],
    domain: &InputDomain,
) -> Result<LinearProgram, RegionError> {
    let mut objective = vec![0.0; n + 1];
    objective[n] = 1.0;
    let mut lp = LinearProgram::new(n + 1).maximize(objective);
    for (layer, bits) in forms.iter().zip(gates) {
        for (form, &on) in layer.iter().zip(bits) {
            let s = if on { 0.5 } else { -0.5 };
            // s * (c . x + o) - t >= 0
            let mut row: Vec<f64> = form.coeffs.iter().map(|c| s * c).collect();
            row.push(-1.0);
            lp.constrain(row, Relation::Ge, -s * form.offset);
        }
    }
    add_domain(&mut lp, n, domain)?;
    Ok(lp)
}

fn add_domain(lp: &mut LinearProgram, n: usize, domain: &InputDomain) -> Result<(), RegionError> {
    match domain {
        InputDomain::AllSpace => {}
        InputDomain::Box { lower, upper } => {
            for j in 0..n {
                lp.bound(j, VarBounds::between(lower[j], upper[j]));
            }
        }
        InputDomain::Polytope { a, b } => {
            for (row, rhs) in a.iter().zip(b) {
                let mut coeffs = row.clone();
                coeffs.resize(lp.num_vars(), 0.0);
                lp.constrain(coeffs, Relation::Le, *rhs);
            }
        }
        InputDomain::L2Ball { .. } => return Err(RegionError::NonPolyhedralDomain),
    }
    Ok(())
}

/// Center and radius of the largest Euclidean ball inside a polyhedral
/// domain. Unbounded directions are capped at radius `cap`.
pub fn chebyshev_center(
    domain: &InputDomain,
    input_dim: usize,
    cap: f64,
) -> Result<(Vec<f64>, f64), RegionError> {
    domain.validate(input_dim)?;
    let n = input_dim;
    match domain {
        InputDomain::AllSpace => Ok((vec![0.0; n], cap)),
        InputDomain::Box { lower, upper } => {
            let center = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
            let radius = lower
                .iter()
                .zip(upper)
                .map(|(l, u)| 0.5 * (u - l))
                .fold(cap, f64::min);
            Ok((center, radius))
        }
        InputDomain::Polytope { a, b } => {
            let mut objective = vec![0.0; n + 1];
            objective[n] = 1.0;
            let mut lp = LinearProgram::new(n + 1).maximize(objective);
            lp.bound(n, VarBounds::between(0.0, cap));
            for (row, rhs) in a.iter().zip(b) {
                let mut coeffs = row.clone();
                coeffs.push(norm2(row));
                lp.constrain(coeffs, Relation::Le, *rhs);
            }
            match lp_solve(&lp)? {
                LpOutcome::Optimal { mut point, value } => {
                    point.pop();
                    Ok((point, value.max(0.0)))
                }
                LpOutcome::Infeasible => Err(RegionError::EmptyDomain),
                LpOutcome::Unbounded { .. } => {
                    Err(LpError::NumericalBreakdown("capped Chebyshev LP reported unbounded".into()).into())
                }
            }
        }
        InputDomain::L2Ball { center, radius } => Ok((center.clone(), radius.min(cap))),
    }
}
