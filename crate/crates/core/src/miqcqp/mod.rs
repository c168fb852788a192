//! Mixed-integer quadratically constrained models of the pattern-norm
//! maximization problem.
//!
//! For a level `eps >= 0` the model couples
//!
//! * the forward pass `x_k = s_k * (M_k x_{k-1} + b_k)` for hidden layers,
//! * the margins `(s_k - 1/2) * (M_k x_{k-1} + b_k) >= eps`,
//! * the gated Jacobian chain `y_1 = M_1 y_0`, `y_k = M_k diag(s_{k-1}) y_{k-1}`,
//! * `x_0` in the domain and a `p`-norm unit ball on `y_0`,
//!
//! and maximizes `||y_L||_p` (squared for `p = 2`). Absolute values for
//! `p = 1` are linearized with binary sign variables and big-M rows; `p = inf`
//! picks the largest output coordinate with a one-hot selector.
//!
//! Variable names: `x{k}_{i}`, `s{k}_{i}` (pattern bits), `y{k}_{i}`, and
//! `u_i`, `w_i`, `nu_i`, `mu_i`, `eta_i`, `z_i` for the norm blocks, all
//! 1-based in `i`.

mod check;
mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DomainError, InputDomain};
use crate::network::{MlpNetwork, NetworkError};
use crate::norms::{operator_norm, NormError, NormKind};
use crate::simplex::Relation;

pub use check::{check_assignment, witness_for_pattern, witness_from_bounds, Assignment, CheckReport, Violation};
pub use io::{emit_json, emit_lp_text, parse_json, FORMAT_VERSION};

/// Safety factor applied to the norm-product big-M constant.
pub const BIG_M_SAFETY: f64 = 1.01;
pub const DEFAULT_CHECK_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("eps must be a finite number >= 0, got {0}")]
    InvalidEps(f64),
    #[error("assignment has no value for variable '{0}'")]
    MissingVariable(String),
    #[error("malformed model: {0}")]
    Schema(String),
    #[error("no witness available: {0}")]
    NoWitness(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Region(#[from] crate::region::RegionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// `sum coef * var  rel  rhs`, variables by declaration index.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `sum q * v_i * v_j + sum coef * var  rel  rhs`. Each triplet `(i, j, q)`
/// has `i >= j` and contributes `q v_i v_j` once.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstraint {
    pub name: String,
    pub quad: Vec<(usize, usize, f64)>,
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Maximized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Objective {
    pub quad: Vec<(usize, usize, f64)>,
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetadata {
    pub p: NormKind,
    pub eps: f64,
    /// Constant `C` of the big-M rows, when the model has any.
    pub big_m: Option<f64>,
    pub linearized_inf: bool,
    /// Variable names per role: `x`, `sigma`, `y`, `u`, `w`, `nu`, `mu`,
    /// `eta`, `z`.
    pub groups: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqcqpModel {
    pub variables: Vec<Variable>,
    pub linear: Vec<LinearConstraint>,
    pub quadratic: Vec<QuadraticConstraint>,
    pub objective: Objective,
    pub metadata: ModelMetadata,
}

impl MiqcqpModel {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelOptions {
    /// For `p = inf`: replace the bilinear `eta . u` objective and the
    /// `u = (2 mu - 1) y_L` equalities by big-M rows.
    pub linearize_inf_objective: bool,
}

/// `C = 1.01 * prod ||M_k||_p`, or `1` when the product vanishes. Bounds
/// every `|(y_L)_i|` reachable from a `p`-unit `y_0`.
pub fn compute_big_m(net: &MlpNetwork, p: NormKind) -> Result<f64, ModelError> {
    let mut product = 1.0;
    for layer in net.layers() {
        product *= operator_norm(&layer.weights, p)?;
    }
    Ok(if product == 0.0 { 1.0 } else { BIG_M_SAFETY * product })
}

struct Builder {
    model: MiqcqpModel,
}

impl Builder {
    fn var(&mut self, group: &str, name: String, kind: VarKind, lower: Option<f64>, upper: Option<f64>) -> usize {
        let (lower, upper) = match kind {
            VarKind::Binary => (Some(0.0), Some(1.0)),
            VarKind::Continuous => (lower, upper),
        };
        self.model
            .metadata
            .groups
            .entry(group.to_string())
            .or_default()
            .push(name.clone());
        self.model.variables.push(Variable { name, kind, lower, upper });
        self.model.variables.len() - 1
    }

    fn linear(&mut self, name: String, terms: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.model.linear.push(LinearConstraint { name, terms, relation, rhs });
    }

    fn quadratic(&mut self, name: String, quad: Vec<(usize, usize, f64)>, terms: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.model.quadratic.push(QuadraticConstraint { name, quad, terms, relation, rhs });
    }

    /// The six rows forcing `a = |v|` with sign bit `lambda` and bound `c`.
    fn abs_block(&mut self, tag: &str, i: usize, v: usize, a: usize, lambda: usize, c: f64) {
        let n = i + 1;
        self.linear(format!("{tag}_ge_pos_{n}"), vec![(v, 1.0), (a, -1.0)], Relation::Le, 0.0);
        self.linear(format!("{tag}_ge_neg_{n}"), vec![(v, -1.0), (a, -1.0)], Relation::Le, 0.0);
        self.linear(format!("{tag}_sign_up_{n}"), vec![(v, 1.0), (lambda, c)], Relation::Le, c);
        self.linear(format!("{tag}_sign_lo_{n}"), vec![(v, 1.0), (lambda, c)], Relation::Ge, 0.0);
        self.linear(format!("{tag}_le_neg_{n}"), vec![(a, 1.0), (v, 1.0), (lambda, 2.0 * c)], Relation::Le, 2.0 * c);
        self.linear(format!("{tag}_le_pos_{n}"), vec![(a, 1.0), (v, -1.0), (lambda, -2.0 * c)], Relation::Le, 0.0);
    }
}

/// Lower-triangular triplet.
fn tri(i: usize, j: usize, q: f64) -> (usize, usize, f64) {
    (i.max(j), i.min(j), q)
}

pub fn build_model(
    net: &MlpNetwork,
    domain: &InputDomain,
    p: NormKind,
    eps: f64,
    options: ModelOptions,
) -> Result<MiqcqpModel, ModelError> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(ModelError::InvalidEps(eps));
    }
    domain.validate(net.input_dim())?;
    let widths = net.widths().to_vec();
    let depth = net.depth();
    let layers = net.layers();
    let needs_big_m = p == NormKind::L1 || (p == NormKind::LInf && options.linearize_inf_objective);
    let big_m = if needs_big_m { Some(compute_big_m(net, p)?) } else { None };

    let mut b = Builder {
        model: MiqcqpModel {
            variables: Vec::new(),
            linear: Vec::new(),
            quadratic: Vec::new(),
            objective: Objective::default(),
            metadata: ModelMetadata {
                p,
                eps,
                big_m,
                linearized_inf: p == NormKind::LInf && options.linearize_inf_objective,
                groups: BTreeMap::new(),
            },
        },
    };

    // x_0 .. x_{L-1} and the pattern bits.
    let mut x: Vec<Vec<usize>> = Vec::with_capacity(depth);
    let mut s: Vec<Vec<usize>> = Vec::with_capacity(depth - 1);
    x.push(
        (0..widths[0])
            .map(|i| {
                let (lo, up) = match domain {
                    InputDomain::Box { lower, upper } => (Some(lower[i]), Some(upper[i])),
                    _ => (None, None),
                };
                b.var("x", format!("x0_{}", i + 1), VarKind::Continuous, lo, up)
            })
            .collect(),
    );
    for k in 1..depth {
        x.push((0..widths[k]).map(|i| b.var("x", format!("x{k}_{}", i + 1), VarKind::Continuous, None, None)).collect());
        s.push((0..widths[k]).map(|i| b.var("sigma", format!("s{k}_{}", i + 1), VarKind::Binary, None, None)).collect());
    }
    let y0_bounds = match p {
        NormKind::L2 => (None, None),
        NormKind::L1 | NormKind::LInf => (Some(-1.0), Some(1.0)),
    };
    let y: Vec<Vec<usize>> = (0..=depth)
        .map(|k| {
            (0..widths[k])
                .map(|i| {
                    let (lo, up) = if k == 0 { y0_bounds } else { (None, None) };
                    b.var("y", format!("y{k}_{}", i + 1), VarKind::Continuous, lo, up)
                })
                .collect()
        })
        .collect();

    // Forward pass and margins for hidden layers.
    for k in 1..depth {
        let layer = &layers[k - 1];
        for i in 0..widths[k] {
            let si = s[k - 1][i];
            let bias = layer.bias[i];
            let row = layer.weights.row(i);
            let mut quad = Vec::new();
            let mut half = Vec::new();
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    quad.push(tri(si, x[k - 1][j], w));
                    half.push((x[k - 1][j], -0.5 * w));
                }
            }
            let neg_quad: Vec<_> = quad.iter().map(|&(a, c, q)| (a, c, -q)).collect();
            let mut terms = vec![(x[k][i], 1.0)];
            if bias != 0.0 {
                terms.push((si, -bias));
            }
            b.quadratic(format!("x{k}_def_{}", i + 1), neg_quad, terms, Relation::Eq, 0.0);
            let mut terms = half;
            if bias != 0.0 {
                terms.push((si, bias));
            }
            b.quadratic(format!("margin{k}_{}", i + 1), quad, terms, Relation::Ge, eps + 0.5 * bias);
        }
    }

    // Jacobian chain.
    for i in 0..widths[1] {
        let mut terms = vec![(y[1][i], 1.0)];
        for (j, &w) in layers[0].weights.row(i).iter().enumerate() {
            if w != 0.0 {
                terms.push((y[0][j], -w));
            }
        }
        b.linear(format!("y1_def_{}", i + 1), terms, Relation::Eq, 0.0);
    }
    for k in 2..=depth {
        for i in 0..widths[k] {
            let quad = layers[k - 1]
                .weights
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(j, &w)| tri(s[k - 2][j], y[k - 1][j], -w))
                .collect();
            b.quadratic(format!("y{k}_def_{}", i + 1), quad, vec![(y[k][i], 1.0)], Relation::Eq, 0.0);
        }
    }

    match domain {
        InputDomain::AllSpace | InputDomain::Box { .. } => {}
        InputDomain::Polytope { a, b: rhs } => {
            for (r, (row, &bound)) in a.iter().zip(rhs).enumerate() {
                let terms = row.iter().enumerate().filter(|(_, &c)| c != 0.0).map(|(j, &c)| (x[0][j], c)).collect();
                b.linear(format!("domain_{}", r + 1), terms, Relation::Le, bound);
            }
        }
        InputDomain::L2Ball { center, radius } => {
            let quad = x[0].iter().map(|&v| (v, v, 1.0)).collect();
            let terms = x[0]
                .iter()
                .zip(center)
                .filter(|(_, &c)| c != 0.0)
                .map(|(&v, &c)| (v, -2.0 * c))
                .collect();
            let c2: f64 = center.iter().map(|c| c * c).sum();
            b.quadratic("domain_ball".into(), quad, terms, Relation::Le, radius * radius - c2);
        }
    }

    let n0 = widths[0];
    let nl = widths[depth];
    let yl = &y[depth];
    match p {
        NormKind::L2 => {
            let quad = y[0].iter().map(|&v| (v, v, 1.0)).collect();
            b.quadratic("y0_norm".into(), quad, Vec::new(), Relation::Le, 1.0);
            b.model.objective.quad = yl.iter().map(|&v| (v, v, 1.0)).collect();
        }
        NormKind::L1 => {
            let c = big_m.expect("p = 1 uses big-M");
            let u: Vec<usize> = (0..n0).map(|i| b.var("u", format!("u_{}", i + 1), VarKind::Continuous, None, None)).collect();
            let nu: Vec<usize> = (0..n0).map(|i| b.var("nu", format!("nu_{}", i + 1), VarKind::Binary, None, None)).collect();
            let w: Vec<usize> = (0..nl).map(|i| b.var("w", format!("w_{}", i + 1), VarKind::Continuous, None, None)).collect();
            let mu: Vec<usize> = (0..nl).map(|i| b.var("mu", format!("mu_{}", i + 1), VarKind::Binary, None, None)).collect();
            for i in 0..n0 {
                b.abs_block("u", i, y[0][i], u[i], nu[i], 1.0);
            }
            b.linear("u_sum".into(), u.iter().map(|&v| (v, 1.0)).collect(), Relation::Le, 1.0);
            for i in 0..nl {
                b.abs_block("w", i, yl[i], w[i], mu[i], c);
            }
            b.model.objective.terms = w.iter().map(|&v| (v, 1.0)).collect();
        }
        NormKind::LInf => {
            let mu: Vec<usize> = (0..nl).map(|i| b.var("mu", format!("mu_{}", i + 1), VarKind::Binary, None, None)).collect();
            let u: Vec<usize> = (0..nl).map(|i| b.var("u", format!("u_{}", i + 1), VarKind::Continuous, Some(0.0), None)).collect();
            let eta: Vec<usize> = (0..nl).map(|i| b.var("eta", format!("eta_{}", i + 1), VarKind::Binary, None, None)).collect();
            b.linear("eta_sum".into(), eta.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0);
            match big_m {
                None => {
                    for i in 0..nl {
                        // u_i - 2 mu_i y_i + y_i = 0
                        b.quadratic(
                            format!("u_def_{}", i + 1),
                            vec![tri(mu[i], yl[i], -2.0)],
                            vec![(u[i], 1.0), (yl[i], 1.0)],
                            Relation::Eq,
                            0.0,
                        );
                    }
                    b.model.objective.quad = (0..nl).map(|i| tri(eta[i], u[i], 1.0)).collect();
                }
                Some(c) => {
                    let z: Vec<usize> = (0..nl).map(|i| b.var("z", format!("z_{}", i + 1), VarKind::Continuous, Some(0.0), None)).collect();
                    for i in 0..nl {
                        b.abs_block("u", i, yl[i], u[i], mu[i], c);
                        b.linear(format!("z_le_u_{}", i + 1), vec![(z[i], 1.0), (u[i], -1.0)], Relation::Le, 0.0);
                        b.linear(format!("z_le_eta_{}", i + 1), vec![(z[i], 1.0), (eta[i], -c)], Relation::Le, 0.0);
                    }
                    b.model.objective.terms = z.iter().map(|&v| (v, 1.0)).collect();
                }
            }
        }
    }
    Ok(b.model)
}
